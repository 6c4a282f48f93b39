"""Command-line driver: one subcommand per pipeline stage.

Every artifact lands under ``paths.work_dir`` with a fingerprint of the
relevant config sections and the manifest contents in its filename, so a
re-run with unchanged inputs finds the file and skips the stage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synth
from .config import RunConfig, dump_config, load_config
from .corpus import Label, load_manifest
from .errors import ConfigurationError, SpeechmarkError
from .evaluation import (
    CLASS_INDEX,
    GRIDS,
    load_cases,
    run_ablation,
    run_cv,
    train_options,
    write_reports,
    xvector_config,
)
from .gmm import GmmModel, train_ubm
from .ivector import TotalVariabilityModel, accumulate_stats, train_t_matrix
from .ngram import NgramModel, score_case, train_ngram
from .xvector import XvectorNet, train_xvector

log = logging.getLogger("speechmark")

STAGES = ("ingest-validate", "train-ngram", "train-ubm", "train-ivector", "train-xvector",
          "extract", "evaluate", "ablate", "synth-data")


class UsageError(ConfigurationError):
    pass


# --- argument handling --------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file with [section] headers")
    common.add_argument("--set", nargs=2, action="append", default=[], metavar=("SECTION.KEY", "VALUE"),
                        dest="overrides", help="override one config value (repeatable)")
    common.add_argument("--jobs", type=int, default=None, help="maximum worker threads")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="speechmark", parents=[common],
        description="Dementia screening from perplexity, i-vector and x-vector features.",
        epilog="Any config value can also be given as --section.key VALUE.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    helps = {
        "ingest-validate": "check the manifest and report label/fold counts",
        "train-ngram": "train the two class language models on every case",
        "train-ubm": "train the background GMM on every case",
        "train-ivector": "train the total-variability matrix on every case",
        "train-xvector": "train the x-vector network on every case",
        "extract": "write per-case perplexities, i-vectors and x-vectors",
        "evaluate": "k-fold cross-validation with the configured blocks",
        "ablate": "run the ablation grids",
        "synth-data": "generate the deterministic two-class synthetic corpus",
    }
    for name in STAGES:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "ablate":
            p.add_argument("--grid", choices=(*GRIDS, "all"), default="all")
        if name == "synth-data":
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--cases", type=int, default=200)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--duration", type=float, default=4.2, help="seconds of audio per case (before jitter)")
    return parser


def _split_flag_overrides(extra: list[str]) -> list[tuple[str, str]]:
    """Turn leftover ``--section.key value`` / ``--section.key=value`` tokens into overrides."""
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unrecognized argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            key, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"{tok} needs a value")
            key, value = name, extra[i + 1]
            i += 2
        pairs.append((key.replace("-", "_"), value))
    return pairs


# --- shared plumbing ---------------------------------------------------------

class Context:
    def __init__(self, config: RunConfig, jobs: int):
        self.config = config
        self.jobs = jobs
        self.work = Path(config.paths.work_dir)
        self._recordings = None
        self._cases = None
        self._manifest_digest = None

    def require_manifest(self) -> Path:
        if not self.config.paths.manifest:
            raise UsageError("missing required config key paths.manifest")
        path = Path(self.config.paths.manifest)
        if not path.is_file():
            raise UsageError(f"paths.manifest: no such file {path}")
        return path

    @property
    def manifest_digest(self) -> str:
        if self._manifest_digest is None:
            self._manifest_digest = hashlib.sha256(self.require_manifest().read_bytes()).hexdigest()[:12]
        return self._manifest_digest

    def fingerprint(self, *sections: str) -> str:
        """Config-section hash combined with the manifest hash."""
        payload = f"{self.config.fingerprint(*sections)}:{self.manifest_digest}"
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def artifact(self, stem: str, suffix: str, *sections: str) -> Path:
        self.work.mkdir(parents=True, exist_ok=True)
        return self.work / f"{stem}-{self.fingerprint(*sections)}{suffix}"

    @property
    def recordings(self):
        if self._recordings is None:
            self._recordings = load_manifest(self.require_manifest(), self.config.cv.k_folds, self.config.cv.seed)
        return self._recordings

    @property
    def cases(self):
        if self._cases is None:
            cache_dir = Path(self.config.paths.cache_dir) if self.config.paths.cache_dir else self.work / "features"
            self._cases = load_cases(self.recordings, self.config, cache_dir, self.jobs)
        return self._cases


def _cached(path: Path) -> bool:
    if path.exists():
        log.info("cache hit: %s", path)
        return True
    return False


def _done(*paths: Path) -> int:
    for p in paths:
        print(p)
    return 0


# --- stages ------------------------------------------------------------------

def cmd_ingest_validate(ctx: Context, args) -> int:
    out = ctx.artifact("ingest", ".json", "cv")
    if not _cached(out):
        recs = ctx.recordings
        summary = {"n": len(recs), "labels": {}, "folds": {}}
        for r in recs:
            summary["labels"][r.label.value] = summary["labels"].get(r.label.value, 0) + 1
            key = str(r.fold)
            summary["folds"].setdefault(key, {lab.value: 0 for lab in Label})[r.label.value] += 1
        out.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    summary = json.loads(out.read_text(encoding="utf-8"))
    print(f"{summary['n']} recordings: " + ", ".join(f"{k} {v}" for k, v in sorted(summary["labels"].items())))
    return _done(out)


def _ngram_paths(ctx):
    return {lab: ctx.artifact(f"ngram-{lab.value.lower()}", ".lm", "ngram") for lab in Label}


def _train_ngrams(ctx):
    paths = _ngram_paths(ctx)
    if all(_cached(p) for p in paths.values()):
        return {lab: NgramModel.load(p) for lab, p in paths.items()}
    p = ctx.config.ngram
    models = {}
    for lab, path in paths.items():
        corpus = [list(c.tokens) for c in ctx.cases if c.label is lab]
        models[lab] = train_ngram(corpus, p.order, p.smoothing, p.discount, p.unk_threshold, p.katz_cutoff)
        models[lab].save(path)
    return models


def cmd_train_ngram(ctx, args) -> int:
    _train_ngrams(ctx)
    return _done(*_ngram_paths(ctx).values())


def _ubm_path(ctx):
    return ctx.artifact("ubm", ".gmm", "frontend", "ubm")


def _train_ubm(ctx) -> GmmModel:
    path = _ubm_path(ctx)
    if _cached(path):
        return GmmModel.load(path)
    p = ctx.config.ubm
    ubm = train_ubm([c.features for c in ctx.cases], p.components, iters=p.iters, seed=p.seed)
    ubm.save(path)
    return ubm


def cmd_train_ubm(ctx, args) -> int:
    _train_ubm(ctx)
    return _done(_ubm_path(ctx))


def _tvm_path(ctx):
    return ctx.artifact("tvm", ".tvm", "frontend", "ubm", "ivector")


def _train_tvm(ctx) -> TotalVariabilityModel:
    ubm = _train_ubm(ctx)
    path = _tvm_path(ctx)
    if _cached(path):
        return TotalVariabilityModel.load(path, ubm)
    p = ctx.config.ivector
    stats = [accumulate_stats(ubm, c.features) for c in ctx.cases]
    tvm = train_t_matrix(stats, ubm, p.rank, iters=p.iters, seed=p.seed)
    tvm.save(path)
    return tvm


def cmd_train_ivector(ctx, args) -> int:
    _train_tvm(ctx)
    return _done(_ubm_path(ctx), _tvm_path(ctx))


def _xvector_path(ctx):
    return ctx.artifact("xvector", ".net", "frontend", "xvector")


def _train_xvec(ctx) -> XvectorNet:
    path = _xvector_path(ctx)
    if _cached(path):
        return XvectorNet.load(path)
    p = ctx.config.xvector
    cases = ctx.cases
    net = XvectorNet(xvector_config(p, cases[0].features.shape[1]), seed=p.seed)
    train_xvector(net, [(c.features, CLASS_INDEX[c.label]) for c in cases], train_options(p, p.seed))
    net.save(path)
    return net


def cmd_train_xvector(ctx, args) -> int:
    _train_xvec(ctx)
    return _done(_xvector_path(ctx))


def cmd_extract(ctx, args) -> int:
    """Embeddings from models fit on the whole manifest (for inspection, not for scoring)."""
    out = ctx.artifact("features", ".npz", "frontend", "ngram", "ubm", "ivector", "xvector")
    if not _cached(out):
        models = _train_ngrams(ctx)
        tvm = _train_tvm(ctx)
        net = _train_xvec(ctx)
        cases = ctx.cases
        np.savez(
            out,
            ids=np.array([c.id for c in cases]),
            labels=np.array([c.label.value for c in cases]),
            log_perplexity=np.stack([score_case(models[Label.DEMENTIA], models[Label.CONTROL], c.tokens).log_values
                                     for c in cases]),
            ivector=np.stack([tvm.extract(accumulate_stats(tvm.ubm, c.features)) for c in cases]),
            xvector=np.stack([net.embed(c.features) for c in cases]),
        )
    return _done(out)


def _report_paths(ctx, stem):
    fp = ctx.fingerprint()
    return ctx.work / f"{stem}-{fp}.jsonl", ctx.work / f"{stem}-{fp}.txt"


def cmd_evaluate(ctx, args) -> int:
    jsonl, table = _report_paths(ctx, "evaluate")
    if not (_cached(jsonl) and table.exists()):
        report = run_cv(ctx.cases, ctx.config, cell="evaluate")
        write_reports([report], ctx.work, jsonl.stem)
    record = json.loads(jsonl.read_text(encoding="utf-8").splitlines()[0])
    m = record["metrics"]
    print(f"accuracy {m['accuracy']:.1f}  precision {m['precision']:.1f}  recall {m['recall']:.1f}  "
          f"f1 {m['f1']:.1f}  (macro, {sum(record['confusion'].values())} cases)")
    return _done(jsonl, table)


def cmd_ablate(ctx, args) -> int:
    grids = GRIDS if args.grid == "all" else (args.grid,)
    jsonl, table = _report_paths(ctx, f"ablate-{args.grid}")
    if not (_cached(jsonl) and table.exists()):
        write_reports(run_ablation(ctx.cases, ctx.config, grids=grids), ctx.work, jsonl.stem)
    print(table.read_text(encoding="utf-8").rstrip())
    return _done(jsonl, table)


def cmd_synth_data(args) -> int:
    records = synth.generate(args.out, n_cases=args.cases, seed=args.seed, duration=args.duration)
    manifest = Path(args.out) / "manifest.csv"
    print(f"{len(records)} cases written")
    return _done(manifest)


HANDLERS = {
    "ingest-validate": cmd_ingest_validate,
    "train-ngram": cmd_train_ngram,
    "train-ubm": cmd_train_ubm,
    "train-ivector": cmd_train_ivector,
    "train-xvector": cmd_train_xvector,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = [tuple(pair) for pair in args.overrides] + _split_flag_overrides(extra)
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if args.command == "synth-data":
            return cmd_synth_data(args)
        config = load_config(args.config, overrides)
        ctx = Context(config, args.jobs or 1)
        log.debug("config:\n%s", dump_config(config))
        return HANDLERS[args.command](ctx, args)
    except ConfigurationError as exc:
        print(f"speechmark: error: {exc}", file=sys.stderr)
        return 2
    except (SpeechmarkError, OSError) as exc:
        print(f"speechmark: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
