"""Leakage-safe k-fold evaluation and the modality/grid ablation harness."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import frontend as fe
from .config import RunConfig
from .corpus import Label, Recording, assign_folds, read_audio, read_transcript
from .errors import ConfigurationError, LeakageError, SpeechmarkError
from .fusion import BlockLayout, fuse, predict, train_svm
from .gmm import train_ubm
from .ivector import accumulate_stats, train_t_matrix
from .ngram import Smoothing, score_case, train_ngram
from .xvector import COMPACT_CONTEXTS, CONTEXT_FREE, TABLE_CONTEXTS, TrainOptions, XvectorConfig, XvectorNet, train_xvector

log = logging.getLogger(__name__)

CONTEXT_PRESETS = {"table": TABLE_CONTEXTS, "compact": COMPACT_CONTEXTS, "none": CONTEXT_FREE}
CLASS_INDEX = {Label.CONTROL: 0, Label.DEMENTIA: 1}


# --- data -------------------------------------------------------------------

@dataclass(frozen=True)
class Case:
    """One recording with its normalized transcript and acoustic features loaded."""

    id: str
    label: Label
    fold: int
    tokens: tuple
    features: np.ndarray = field(repr=False)


def _load_features(rec: Recording, config: RunConfig, cache_dir: Path | None) -> np.ndarray:
    cache = None
    if cache_dir is not None:
        cache = cache_dir / f"{rec.id}-{config.fingerprint('frontend')}.feat"
        if cache.is_file():
            return fe.read_feature_cache(cache)
    signal = read_audio(rec.audio_path, config.frontend.sample_rate)
    feats = fe.features_for(signal, config.frontend)
    if cache is not None:
        fe.write_feature_cache(cache, feats)
    # always round-trip through float32 so cached and fresh runs agree bitwise
    return feats.astype(np.float32).astype(np.float64)


def load_cases(recordings, config: RunConfig, cache_dir=None, jobs: int = 1) -> list[Case]:
    """Read transcripts and extract per-recording features (no fitted state involved)."""
    cache_dir = Path(cache_dir) if cache_dir else None
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)

    def one(rec):
        tokens = read_transcript(rec.transcript_path, config.ngram.strip_chat, config.ngram.keep_fillers)
        try:
            feats = _load_features(rec, config, cache_dir)
        except SpeechmarkError as exc:
            raise type(exc)(f"recording {rec.id}: {exc}") from None
        return Case(rec.id, rec.label, rec.fold, tuple(tokens), feats)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, recordings))
    return [one(rec) for rec in recordings]


# --- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class Confusion:
    """Counts with Dementia as the positive class."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, truth, predicted) -> "Confusion":
        pairs = list(zip(truth, predicted))
        pos, neg = Label.DEMENTIA, Label.CONTROL
        return cls(sum(t is pos and p is pos for t, p in pairs), sum(t is neg and p is neg for t, p in pairs),
                   sum(t is neg and p is pos for t, p in pairs), sum(t is pos and p is neg for t, p in pairs))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def metrics(self) -> dict[str, float]:
        """Accuracy and macro-averaged precision, recall and F1, in percent."""
        def ratio(a, b):
            return a / b if b else 0.0

        prec = (ratio(self.tp, self.tp + self.fp), ratio(self.tn, self.tn + self.fn))
        rec = (ratio(self.tp, self.tp + self.fn), ratio(self.tn, self.tn + self.fp))
        f1 = [ratio(2 * p * r, p + r) for p, r in zip(prec, rec)]
        return {
            "accuracy": 100.0 * ratio(self.tp + self.tn, self.total),
            "precision": 100.0 * float(np.mean(prec)),
            "recall": 100.0 * float(np.mean(rec)),
            "f1": 100.0 * float(np.mean(f1)),
        }


@dataclass
class MetricsReport:
    cell: str
    params: dict
    confusion: Confusion
    per_fold: list
    fingerprint: str
    predictions: dict = field(default_factory=dict, repr=False)

    @property
    def accuracy(self) -> float:
        return self.confusion.metrics()["accuracy"]

    @property
    def precision(self) -> float:
        return self.confusion.metrics()["precision"]

    @property
    def recall(self) -> float:
        return self.confusion.metrics()["recall"]

    @property
    def f1(self) -> float:
        return self.confusion.metrics()["f1"]

    def to_record(self) -> dict:
        return {
            "cell": self.cell,
            "params": self.params,
            "fingerprint": self.fingerprint,
            "averaging": "macro",
            "confusion": vars(self.confusion),
            "metrics": {k: round(v, 6) for k, v in self.confusion.metrics().items()},
            "per_fold": self.per_fold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


# --- leakage bookkeeping ----------------------------------------------------

class LeakageGuard:
    """Rejects any training input that contains a held-out id."""

    def __init__(self, fold: int, test_ids):
        self.fold = fold
        self.test_ids = frozenset(test_ids)
        self.stages: dict[str, int] = {}

    def check(self, stage: str, cases) -> list:
        cases = list(cases)
        leaked = sorted(self.test_ids.intersection(c.id for c in cases))
        if leaked:
            raise LeakageError(f"fold {self.fold}: test id(s) {leaked[:5]} reached training stage {stage!r}")
        self.stages[stage] = self.stages.get(stage, 0) + len(cases)
        return cases


def split_fold(cases, fold: int):
    train = [c for c in cases if c.fold != fold]
    test = [c for c in cases if c.fold == fold]
    return train, test


# --- per-block features -----------------------------------------------------

def _by_label(cases, label):
    return [list(c.tokens) for c in cases if c.label is label]


def _train_class_models(cases, params, guard, stage):
    guard.check(stage, cases)
    kw = dict(order=params.order, smoothing=params.smoothing, discount=params.discount,
              unk_threshold=params.unk_threshold, katz_cutoff=params.katz_cutoff)
    return train_ngram(_by_label(cases, Label.DEMENTIA), **kw), train_ngram(_by_label(cases, Label.CONTROL), **kw)


def perplexity_block(train, test, params, guard, seed: int = 0) -> dict:
    """Log-perplexity pairs for every case.

    Test cases are scored by models trained on all of ``train``; training
    cases are scored out-of-fold over ``params.inner_folds`` inner splits so
    the classifier sees perplexities of unseen text on both sides.
    """
    out = {}
    dem, con = _train_class_models(train, params, guard, "ngram")
    for c in test:
        out[c.id] = score_case(dem, con, c.tokens)
    if params.inner_folds > 1:
        inner = assign_folds([c.label for c in train], params.inner_folds, seed)
        for f in range(params.inner_folds):
            fit = [c for c, i in zip(train, inner) if i != f]
            held = [c for c, i in zip(train, inner) if i == f]
            if not held:
                continue
            dem_i, con_i = _train_class_models(fit, params, guard, f"ngram/inner{f}")
            for c in held:
                out[c.id] = score_case(dem_i, con_i, c.tokens)
    else:
        for c in train:
            out[c.id] = score_case(dem, con, c.tokens)
    return {k: v.log_values for k, v in out.items()}


def ivector_block(train, test, ubm_params, iv_params, guard, fold: int = 0) -> dict:
    ubm = train_ubm([c.features for c in guard.check("ubm", train)], ubm_params.components,
                    iters=ubm_params.iters, seed=ubm_params.seed + fold)
    train_stats = [accumulate_stats(ubm, c.features) for c in guard.check("t-matrix", train)]
    tv = train_t_matrix(train_stats, ubm, iv_params.rank, iters=iv_params.iters, seed=iv_params.seed + fold)
    out = {c.id: tv.extract(s) for c, s in zip(train, train_stats)}
    for c in test:
        out[c.id] = tv.extract(accumulate_stats(ubm, c.features))
    return out


def xvector_config(params, feat_dim: int) -> XvectorConfig:
    if params.contexts not in CONTEXT_PRESETS:
        raise ConfigurationError(f"unknown x-vector context preset {params.contexts!r}")
    return XvectorConfig(feat_dim, (params.frame_dim,) * 4, params.pre_pool_dim,
                         (params.seg6_dim, params.seg7_dim), 2, CONTEXT_PRESETS[params.contexts])


def train_options(params, seed: int) -> TrainOptions:
    return TrainOptions(epochs=params.epochs, batch_size=params.batch_size, min_chunk=params.min_chunk,
                        max_chunk=params.max_chunk, lr=params.lr, momentum=params.momentum,
                        lr_decay=params.lr_decay, decay_every=params.decay_every,
                        noise_snr_db=params.noise_snr_db, seed=seed)


def xvector_block(train, test, params, guard, fold: int = 0) -> dict:
    feat_dim = train[0].features.shape[1]
    net = XvectorNet(xvector_config(params, feat_dim), seed=params.seed + fold)
    data = [(c.features, CLASS_INDEX[c.label]) for c in guard.check("xvector", train)]
    train_xvector(net, data, train_options(params, params.seed + fold))
    return {c.id: net.embed(c.features) for c in (*train, *test)}


# --- cross-validation -------------------------------------------------------

class FeatureCache:
    """Per-fold block features shared between ablation cells with equal upstream settings."""

    def __init__(self):
        self._store: dict = {}
        self.hits = 0

    def get(self, key, compute):
        if key in self._store:
            self.hits += 1
        else:
            self._store[key] = compute()
        return self._store[key]


def _block_keys(config: RunConfig) -> dict:
    return {
        "perplexity": config.fingerprint("ngram", "cv"),
        "ivector": config.fingerprint("frontend", "ubm", "ivector"),
        "xvector": config.fingerprint("frontend", "xvector"),
    }


def run_cv(dataset, config: RunConfig, cell: str = "cv", cache: FeatureCache | None = None,
           cache_dir=None, jobs: int = 1) -> MetricsReport:
    """k-fold evaluation: every model is refit on the other folds for each held-out fold.

    ``dataset`` holds Recordings (loaded here) or already loaded Cases; folds
    come from the records themselves.
    """
    cases = list(dataset)
    if cases and isinstance(cases[0], Recording):
        cases = load_cases(cases, config, cache_dir, jobs)
    blocks = config.blocks
    if not (blocks.perplexity or blocks.ivector or blocks.xvector):
        raise ConfigurationError("no fusion block enabled")
    k = config.cv.k_folds
    folds = sorted({c.fold for c in cases})
    if not folds or folds[0] < 0 or folds[-1] >= k:
        raise ConfigurationError(f"fold ids {folds[:3]}... do not fit k_folds={k}")

    cache = cache or FeatureCache()
    keys = _block_keys(config)
    layout = BlockLayout(blocks.perplexity, config.ivector.rank if blocks.ivector else 0,
                         config.xvector.seg6_dim if blocks.xvector else 0)
    total = Confusion()
    per_fold, predictions = [], {}
    for fold in folds:
        train, test = split_fold(cases, fold)
        guard = LeakageGuard(fold, (c.id for c in cases if c.fold == fold))
        guard.check("split", train)
        ppl = iv = xv = None
        if blocks.perplexity:
            ppl = cache.get((fold, "perplexity", keys["perplexity"]),
                            lambda: perplexity_block(train, test, config.ngram, guard, config.cv.seed + fold))
        if blocks.ivector:
            iv = cache.get((fold, "ivector", keys["ivector"]),
                           lambda: ivector_block(train, test, config.ubm, config.ivector, guard, fold))
        if blocks.xvector:
            xv = cache.get((fold, "xvector", keys["xvector"]),
                           lambda: xvector_block(train, test, config.xvector, guard, fold))

        def vector(c):
            return fuse(ppl[c.id] if ppl else None, iv[c.id] if iv else None, xv[c.id] if xv else None, layout)

        svm = train_svm([(vector(c), c.label) for c in guard.check("svm", train)], c=config.svm.c,
                        steps=config.svm.steps)
        truth, predicted = [], []
        for c in test:
            label, score = predict(svm, vector(c))
            truth.append(c.label)
            predicted.append(label)
            predictions[c.id] = (label.value, round(score, 10))
        conf = Confusion.from_predictions(truth, predicted)
        total = total + conf
        per_fold.append({"fold": fold, "n_train": len(train), "n_test": len(test), "confusion": vars(conf),
                         "accuracy": round(conf.metrics()["accuracy"], 6)})
        log.info("%s fold %d: accuracy %.1f%%", cell, fold, conf.metrics()["accuracy"])

    params = {"blocks": vars(blocks).copy(), "layout": layout.describe()}
    return MetricsReport(cell, params, total, per_fold, config.fingerprint(), predictions)


# --- ablation ---------------------------------------------------------------

TABLE5_ROWS = (  # (x-vector, i-vector, perplexity)
    (True, False, False), (False, True, False), (False, False, True),
    (True, True, False), (True, False, True), (False, True, True), (True, True, True),
)
GRIDS = ("table3", "table4", "table5")


def grid_cells(config: RunConfig, grid: str):
    """``(cell name, display columns, cell config)`` for each row of a grid."""
    if grid == "table3":
        for order in config.ablation.ngram_orders:
            for smoothing in config.ablation.smoothers:
                cfg = config.replace(ngram={"order": int(order), "smoothing": smoothing},
                                     blocks={"perplexity": True, "ivector": False, "xvector": False})
                title = Smoothing.parse(smoothing).title
                yield f"table3/{order}gram-{smoothing}", {"N-gram": f"{order}-gram", "Smoothing Method": title}, cfg
    elif grid == "table4":
        for comps in config.ablation.ubm_grid:
            for rank in config.ablation.rank_grid:
                cfg = config.replace(ubm={"components": int(comps)}, ivector={"rank": int(rank)},
                                     blocks={"perplexity": False, "ivector": True, "xvector": False})
                yield f"table4/ubm{comps}-iv{rank}", {"UBM Components": comps, "I-vector Size": rank}, cfg
    elif grid == "table5":
        for xv, iv, pp in TABLE5_ROWS:
            cfg = config.replace(blocks={"perplexity": pp, "ivector": iv, "xvector": xv})
            yn = {True: "Yes", False: "No"}
            yield (f"table5/x{int(xv)}i{int(iv)}p{int(pp)}",
                   {"X-vector": yn[xv], "I-vector": yn[iv], "Perplexity": yn[pp]}, cfg)
    else:
        raise ConfigurationError(f"unknown grid {grid!r}; expected one of {', '.join(GRIDS)}")


def run_ablation(dataset, config: RunConfig, grids=GRIDS, cache_dir=None, jobs: int = 1,
                 cache: FeatureCache | None = None) -> list[MetricsReport]:
    """Run every cell of the requested grids, sharing fold features where settings coincide.

    Passing the ``cache`` of an earlier run over the same cases reuses its fold features.
    """
    cases = list(dataset)
    if cases and isinstance(cases[0], Recording):
        cases = load_cases(cases, config, cache_dir, jobs)
    cache = cache if cache is not None else FeatureCache()
    reports = []
    for grid in grids:
        for cell, columns, cfg in grid_cells(config, grid):
            try:
                report = run_cv(cases, cfg, cell=cell, cache=cache)
            except SpeechmarkError as exc:
                raise type(exc)(f"cell {cell}: {exc}") from exc
            report.params["columns"] = columns
            report.params["grid"] = grid
            reports.append(report)
    return reports


METRIC_COLUMNS = (("Accuracy", "accuracy"), ("Precision", "precision"), ("Recall", "recall"), ("F1-Score", "f1"))


def format_table(reports, title: str = "") -> str:
    """Aligned text table: the cell's display columns followed by the four metrics."""
    reports = list(reports)
    if not reports:
        return ""
    keys = list(reports[0].params.get("columns", {"Cell": None}))
    rows = []
    for r in reports:
        cols = r.params.get("columns", {"Cell": r.cell})
        m = r.confusion.metrics()
        rows.append([str(cols[k]) for k in keys] + [f"{m[attr]:.1f}" for _, attr in METRIC_COLUMNS])
    header = keys + [name for name, _ in METRIC_COLUMNS]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    split = len(keys)

    def line(cells):
        left = "  ".join(c.ljust(w) for c, w in zip(cells[:split], widths))
        right = "  ".join(c.rjust(w) for c, w in zip(cells[split:], widths[split:]))
        return f"{left} | {right}"

    out = [title] if title else []
    out += [line(header), "-" * len(line(header))]
    out += [line(row) for row in rows]
    return "\n".join(out)


def write_reports(reports, directory, stem: str) -> tuple[Path, Path]:
    """One JSON line per cell plus the aligned tables, grouped by grid."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    jsonl = directory / f"{stem}.jsonl"
    jsonl.write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")
    groups: dict[str, list] = {}
    for r in reports:
        groups.setdefault(r.params.get("grid", "cv"), []).append(r)
    text = "\n\n".join(format_table(rs, title=f"[{grid}] macro-averaged, percent") for grid, rs in groups.items())
    table = directory / f"{stem}.txt"
    table.write_text(text + "\n", encoding="utf-8")
    return jsonl, table
