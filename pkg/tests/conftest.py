import contextlib
import time

import numpy as np
import pytest

from speechmark.config import RunConfig
from speechmark.corpus import Label, assign_folds
from speechmark.evaluation import Case
from speechmark.synth import WORDS, markov_chain, sample_sentence


def tiny_config(**sections):
    """Small models and 5 folds so full cross-validation runs in seconds."""
    base = RunConfig().replace(
        ubm={"components": 4, "iters": 3},
        ivector={"rank": 3, "iters": 2},
        xvector={"frame_dim": 8, "pre_pool_dim": 16, "seg6_dim": 4, "seg7_dim": 4, "contexts": "compact",
                 "epochs": 3, "batch_size": 8, "min_chunk": 30, "max_chunk": 50},
        svm={"steps": 300},
        cv={"k_folds": 5},
    )
    return base.replace(**sections) if sections else base


def toy_cases(n=60, seed=0, informative=True, k_folds=5, frames=70, dim=4):
    """Cases whose tokens and frames depend on the label only when ``informative``."""
    rng = np.random.default_rng(seed)
    chains = [markov_chain(rng, len(WORDS)), markov_chain(rng, len(WORDS))]
    shift = rng.standard_normal(dim)
    labels = [Label.DEMENTIA if i % 2 == 0 else Label.CONTROL for i in range(n)]
    if not informative:
        labels = [labels[i] for i in rng.permutation(n)]
    folds = assign_folds(labels, k_folds, seed)
    cases = []
    for i, (label, fold) in enumerate(zip(labels, folds)):
        side = (label is Label.DEMENTIA) if informative else bool(rng.integers(2))
        start, trans = chains[int(side)]
        tokens = [w for _ in range(4) for w in sample_sentence(rng, start, trans)]
        feats = rng.standard_normal((frames, dim)) + (shift if side else -shift)
        cases.append(Case(f"c{i:03d}", label, int(fold), tuple(tokens), feats))
    return cases


@pytest.fixture
def small_cases():
    return toy_cases()


# --- acceptance reporting -----------------------------------------------------

_RESULTS = pytest.StashKey[list]()


class Criterion:
    def __init__(self, number, title, limit):
        self.number, self.title, self.limit = number, title, limit
        self.checks = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))


class AcceptanceRecorder:
    def __init__(self, results):
        self.results = results

    @contextlib.contextmanager
    def criterion(self, number, title, limit=None):
        crit = Criterion(number, title, limit)
        start = time.perf_counter()
        error = None
        try:
            yield crit
        except Exception as exc:  # recorded as a failure, then re-raised
            error = exc
        elapsed = time.perf_counter() - start
        if limit is not None:
            crit.check(elapsed < limit, f"runtime {elapsed:.1f}s < {limit}s")
        ok = error is None and bool(crit.checks) and all(ok for ok, _ in crit.checks)
        details = "; ".join(d for _, d in crit.checks)
        if error is not None:
            details = f"{type(error).__name__}: {error}" + (f"; {details}" if details else "")
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({elapsed:.1f}s) {details}"
        self.results.append((number, line))
        print(line)
        if error is not None:
            raise error
        failed = [d for ok_, d in crit.checks if not ok_]
        assert not failed, f"criterion {number} failed: {failed}"


@pytest.fixture
def acceptance(request):
    return AcceptanceRecorder(request.config.stash.setdefault(_RESULTS, []))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results, key=lambda item: item[0]):
            terminalreporter.write_line(line)
