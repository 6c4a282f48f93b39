"""Run configuration: typed sections, file/env/flag overrides and fingerprints."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from .errors import ConfigurationError
from .frontend import FrontendConfig

ENV_PREFIX = "SPEECHMARK_"
REQUIRED_SEEDS = (("ubm", "seed"), ("ivector", "seed"), ("xvector", "seed"), ("cv", "seed"))


@dataclass(frozen=True)
class PathParams:
    manifest: str = ""
    work_dir: str = "work"
    cache_dir: str = ""


@dataclass(frozen=True)
class NgramParams:
    order: int = 2
    smoothing: str = "good_turing"
    discount: float = 0.75
    unk_threshold: int = 1
    katz_cutoff: int = 5
    strip_chat: bool = True
    keep_fillers: bool = True
    inner_folds: int = 5


@dataclass(frozen=True)
class UbmParams:
    components: int = 32
    iters: int = 10
    seed: int = 0


@dataclass(frozen=True)
class IvectorParams:
    rank: int = 32
    iters: int = 5
    seed: int = 0


@dataclass(frozen=True)
class XvectorParams:
    frame_dim: int = 64
    pre_pool_dim: int = 256
    seg6_dim: int = 64
    seg7_dim: int = 64
    contexts: str = "table"
    epochs: int = 10
    batch_size: int = 16
    min_chunk: int = 200
    max_chunk: int = 400
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 0.5
    decay_every: int = 10
    noise_snr_db: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class SvmParams:
    c: float = 1.0
    steps: int = 1000


@dataclass(frozen=True)
class CvParams:
    k_folds: int = 10
    seed: int = 0


@dataclass(frozen=True)
class BlockParams:
    perplexity: bool = True
    ivector: bool = True
    xvector: bool = True


@dataclass(frozen=True)
class AblationParams:
    ngram_orders: tuple = (2, 3, 4)
    smoothers: tuple = ("good_turing", "kneser_ney")
    ubm_grid: tuple = (512, 256, 128, 64)
    rank_grid: tuple = (512, 256, 128, 64)


@dataclass(frozen=True)
class RunConfig:
    paths: PathParams = field(default_factory=PathParams)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    ngram: NgramParams = field(default_factory=NgramParams)
    ubm: UbmParams = field(default_factory=UbmParams)
    ivector: IvectorParams = field(default_factory=IvectorParams)
    xvector: XvectorParams = field(default_factory=XvectorParams)
    svm: SvmParams = field(default_factory=SvmParams)
    cv: CvParams = field(default_factory=CvParams)
    blocks: BlockParams = field(default_factory=BlockParams)
    ablation: AblationParams = field(default_factory=AblationParams)

    def replace(self, **sections) -> "RunConfig":
        """Copy with some fields of some sections replaced: ``replace(ubm={"components": 8})``."""
        updates = {name: dataclasses.replace(getattr(self, name), **values) for name, values in sections.items()}
        return dataclasses.replace(self, **updates)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self, *sections: str) -> str:
        """Hash of the named sections (all but paths and the ablation grid by default)."""
        names = sections or tuple(f.name for f in fields(self) if f.name not in ("paths", "ablation"))
        payload = json.dumps({n: dataclasses.asdict(getattr(self, n)) for n in names}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _section_types(name: str) -> dict:
    cls = type(getattr(RunConfig(), name))
    return get_type_hints(cls)


def _coerce(section: str, key: str, raw: str):
    types = _section_types(section)
    if key not in types:
        raise ConfigurationError(f"unknown key {section}.{key}")
    typ = types[key]
    text = str(raw).strip()
    try:
        if typ is bool:
            lowered = text.lower()
            if lowered not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return lowered in ("1", "true", "yes", "on")
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is tuple:
            items = [item.strip() for item in text.split(",") if item.strip()]
            return tuple(int(item) if item.lstrip("-").isdigit() else item for item in items)
        if "None" in str(typ):
            return None if text.lower() in ("", "none") else float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"{section}.{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def build_config(values: dict[tuple[str, str], str], require_seeds: bool = True) -> RunConfig:
    """Assemble a RunConfig from ``{(section, key): raw string}`` entries."""
    grouped: dict[str, dict] = {}
    for (section, key), raw in values.items():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown section [{section}]")
        grouped.setdefault(section, {})[key] = _coerce(section, key, raw)
    if require_seeds:
        missing = [f"{s}.{k}" for s, k in REQUIRED_SEEDS if k not in grouped.get(s, {})]
        if missing:
            raise ConfigurationError(f"missing required seed(s): {', '.join(missing)}")
    base = RunConfig()
    try:
        return base.replace(**grouped)
    except Exception as exc:  # dataclass validation
        raise ConfigurationError(str(exc)) from None


def read_config_file(path) -> dict[tuple[str, str], str]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return {(section, key): value for section in parser.sections() for key, value in parser[section].items()}


def env_overrides(environ=None) -> dict[tuple[str, str], str]:
    """``SPEECHMARK_SECTION__KEY=value`` entries (double underscore separates section and key)."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX):].lower().split("__", 1)
        out[(section, key)] = value
    return out


def parse_overrides(pairs) -> dict[tuple[str, str], str]:
    out = {}
    for dotted, value in pairs:
        if "." not in dotted:
            raise ConfigurationError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        out[(section, key)] = value
    return out


def load_config(path=None, overrides=(), environ=None, require_seeds: bool = True) -> RunConfig:
    """File values, then environment, then explicit ``section.key`` overrides."""
    values = read_config_file(path) if path else {}
    values.update(env_overrides(environ))
    values.update(parse_overrides(overrides))
    config = build_config(values, require_seeds=require_seeds)
    if path and config.paths.manifest and not Path(config.paths.manifest).is_absolute():
        base = Path(path).parent
        config = config.replace(paths={"manifest": str(base / config.paths.manifest)})
    return config


def dump_config(config: RunConfig) -> str:
    lines = []
    for section, values in config.as_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if isinstance(value, (tuple, list)):
                value = ", ".join(str(v) for v in value)
            elif value is None:
                value = "none"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
