"""Feature fusion and the linear SVM classifier."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Label
from .errors import ConfigurationError, ConsistencyError, FormatError, InputError, TrainingError

BLOCK_ORDER = ("perplexity", "ivector", "xvector")


@dataclass(frozen=True)
class BlockLayout:
    """Which blocks are present and how wide each one is."""

    perplexity: bool = True
    ivector_dim: int = 0
    xvector_dim: int = 0

    def __post_init__(self):
        if not self.perplexity and self.ivector_dim <= 0 and self.xvector_dim <= 0:
            raise ConfigurationError("at least one fusion block must be present")
        if self.ivector_dim < 0 or self.xvector_dim < 0:
            raise ConfigurationError("block widths must be non-negative")

    @property
    def widths(self) -> dict[str, int]:
        return {"perplexity": 2 if self.perplexity else 0, "ivector": self.ivector_dim,
                "xvector": self.xvector_dim}

    @property
    def spans(self) -> dict[str, slice]:
        spans, pos = {}, 0
        for name in BLOCK_ORDER:
            width = self.widths[name]
            if width:
                spans[name] = slice(pos, pos + width)
                pos += width
        return spans

    @property
    def length(self) -> int:
        return sum(self.widths.values())

    def describe(self) -> str:
        return ",".join(f"{name}:{s.start}-{s.stop}" for name, s in self.spans.items())


@dataclass(frozen=True)
class FusionVector:
    values: np.ndarray
    layout: BlockLayout


def fuse(ppl=None, ivec=None, xvec=None, layout: BlockLayout | None = None) -> FusionVector:
    """Concatenate ``[log ppl_dem, log ppl_con] + i-vector + x-vector`` in that order.

    Without a layout, whichever inputs are given define it.
    """
    if layout is None:
        layout = BlockLayout(ppl is not None, 0 if ivec is None else len(ivec), 0 if xvec is None else len(xvec))
    parts = []
    if layout.perplexity:
        if ppl is None:
            raise InputError("layout includes perplexities but none were given")
        parts.append(ppl.log_values if hasattr(ppl, "log_values") else np.log(np.asarray(ppl, dtype=float)))
    for name, value, width in (("i-vector", ivec, layout.ivector_dim), ("x-vector", xvec, layout.xvector_dim)):
        if width:
            if value is None:
                raise InputError(f"layout includes a {name} block but none was given")
            value = np.asarray(value, dtype=np.float64).reshape(-1)
            if len(value) != width:
                raise InputError(f"{name} has {len(value)} values, layout expects {width}")
            parts.append(value)
    values = np.concatenate(parts)
    if not np.all(np.isfinite(values)):
        raise InputError("fused vector contains non-finite values")
    return FusionVector(values, layout)


def _as_sign(label) -> int:
    if isinstance(label, Label):
        return label.sign
    if label in (1, -1):
        return int(label)
    raise InputError(f"cannot interpret {label!r} as a class label")


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    layout: BlockLayout
    history: tuple = field(default=(), compare=False, repr=False)

    def decision(self, values: np.ndarray) -> np.ndarray:
        return ((np.asarray(values) - self.mean) / self.scale) @ self.weights + self.bias

    def save(self, path) -> None:
        layout = json.dumps({"perplexity": self.layout.perplexity, "ivector_dim": self.layout.ivector_dim,
                             "xvector_dim": self.layout.xvector_dim}, sort_keys=True).encode()
        arrays = np.concatenate([self.mean, self.scale, self.weights, [self.bias]]).astype("<f8")
        Path(path).write_bytes(b"SMSVM\0" + struct.pack("<III", 1, len(layout), len(self.weights))
                               + layout + arrays.tobytes())

    @classmethod
    def load(cls, path) -> "SvmModel":
        data = Path(path).read_bytes()
        if data[:6] != b"SMSVM\0":
            raise FormatError(f"{path}: not an SVM model file")
        version, n_layout, dim = struct.unpack_from("<III", data, 6)
        if version != 1:
            raise FormatError(f"{path}: unsupported SVM file version {version}")
        layout = BlockLayout(**json.loads(data[18:18 + n_layout]))
        arrays = np.frombuffer(data, dtype="<f8", offset=18 + n_layout)
        if arrays.size != 3 * dim + 1 or layout.length != dim:
            raise FormatError(f"{path}: SVM file size does not match its layout")
        return cls(arrays[2 * dim:3 * dim].copy(), float(arrays[-1]), arrays[:dim].copy(),
                   arrays[dim:2 * dim].copy(), layout)


def svm_objective(w, b, x, y, lam) -> float:
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, 1.0 - y * (x @ w + b))))


def train_svm(examples, c: float = 1.0, steps: int = 1000) -> SvmModel:
    """Linear soft-margin SVM on z-scored features.

    Minimizes ``(1 / 2C) |w|^2 + mean(hinge)`` by full-batch subgradient
    descent with step ``C / t``. The returned weights are the best running
    average of the iterates; ``history`` holds the best objective so far.
    """
    examples = list(examples)
    if not examples:
        raise TrainingError("no training examples")
    layout = examples[0][0].layout
    if any(vec.layout != layout for vec, _ in examples):
        raise ConsistencyError("training vectors do not share one layout")
    x = np.stack([vec.values for vec, _ in examples])
    y = np.array([_as_sign(lab) for _, lab in examples], dtype=np.float64)
    if len(set(y.tolist())) < 2:
        raise TrainingError("SVM training needs both classes")
    if c <= 0:
        raise ConfigurationError(f"C must be positive, got {c}")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std < 1e-12, 1.0, std)
    z = (x - mean) / scale
    lam = 1.0 / c
    n = len(y)

    w = np.zeros(z.shape[1])
    b = 0.0
    w_avg, b_avg = w.copy(), 0.0
    best = (svm_objective(w, b, z, y, lam), w.copy(), b)
    history = [best[0]]
    for t in range(1, steps + 1):
        active = y * (z @ w + b) < 1.0
        grad_w = lam * w - (y[active] @ z[active]) / n
        grad_b = -np.sum(y[active]) / n
        eta = 1.0 / (lam * t)
        w = w - eta * grad_w
        b = b - eta * grad_b
        w_avg += (w - w_avg) / t
        b_avg += (b - b_avg) / t
        objective = svm_objective(w_avg, b_avg, z, y, lam)
        if objective < best[0]:
            best = (objective, w_avg.copy(), b_avg)
        history.append(best[0])
    return SvmModel(best[1], float(best[2]), mean, scale, layout, tuple(history))


def predict(model: SvmModel, vector: FusionVector) -> tuple[Label, float]:
    """Label and decision score; a score of exactly zero is called Control."""
    if vector.layout != model.layout:
        raise ConsistencyError(f"vector layout {vector.layout.describe()} != model layout {model.layout.describe()}")
    score = float(model.decision(vector.values))
    return (Label.DEMENTIA if score > 0 else Label.CONTROL), score
