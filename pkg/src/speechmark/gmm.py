"""Diagonal-covariance GMM universal background model trained by EM."""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import FormatError, InputError, TrainingError

log = logging.getLogger(__name__)

_MAGIC = b"SMGMM\0"
_VERSION = 1
_HEADER = struct.Struct("<6sIII")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        k, f = self.means.shape
        if self.weights.shape != (k,) or self.variances.shape != (k, f):
            raise InputError(
                f"inconsistent GMM shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, variances {self.variances.shape}"
            )
        if np.any(self.variances <= 0):
            raise InputError("GMM variances must be positive")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_densities(self, frames) -> np.ndarray:
        """``log w_j + log N(x_t | m_j, S_j)`` as a ``(T, k)`` matrix."""
        x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise InputError(f"frame dimension {x.shape[1]} does not match GMM dimension {self.dim}")
        prec = 1.0 / self.variances
        quad = (x ** 2) @ prec.T - 2.0 * x @ (self.means * prec).T + np.sum(self.means ** 2 * prec, axis=1)
        log_norm = -0.5 * (self.dim * LOG_2PI + np.sum(np.log(self.variances), axis=1))
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w + log_norm - 0.5 * quad

    def log_likelihood(self, frames) -> float:
        return float(np.sum(logsumexp(self.component_log_densities(frames), axis=1)))

    def posteriors(self, frames) -> np.ndarray:
        """Component responsibilities; rows sum to one. A single frame gives a k-vector."""
        single = np.ndim(frames) == 1
        lp = self.component_log_densities(frames)
        post = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        return post[0] if single else post

    def to_bytes(self) -> bytes:
        k, f = self.means.shape
        return b"".join([
            _HEADER.pack(_MAGIC, _VERSION, k, f),
            self.weights.astype("<f8").tobytes(),
            self.means.astype("<f8").tobytes(),
            self.variances.astype("<f8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "GmmModel":
        if len(data) < _HEADER.size:
            raise FormatError("truncated GMM file")
        magic, version, k, f = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise FormatError(f"not a GMM v{_VERSION} file")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if body.size != k + 2 * k * f:
            raise FormatError(f"GMM file body has {body.size} values, expected {k + 2 * k * f}")
        return cls(body[:k].copy(), body[k:k + k * f].reshape(k, f).copy(),
                   body[k + k * f:].reshape(k, f).copy())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GmmModel":
        return cls.from_bytes(Path(path).read_bytes())


def _stack(features) -> np.ndarray:
    if isinstance(features, np.ndarray) and features.ndim == 2:
        x = features
    else:
        x = np.concatenate([np.atleast_2d(f) for f in features], axis=0)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError("features contain NaN or infinite values")
    return x


def kmeans(x: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    centers = x[rng.choice(len(x), size=k, replace=False)].copy()
    for _ in range(iters):
        d2 = np.sum(x ** 2, axis=1)[:, None] - 2.0 * x @ centers.T + np.sum(centers ** 2, axis=1)
        assign = np.argmin(d2, axis=1)
        for j in range(k):
            members = x[assign == j]
            centers[j] = members.mean(axis=0) if len(members) else x[rng.integers(len(x))]
    return centers


def _m_step(x, post, var_floor, prev=None):
    nk = post.sum(axis=0)
    total = nk.sum()
    safe = np.maximum(nk, 1e-300)[:, None]
    means = (post.T @ x) / safe
    variances = (post.T @ (x ** 2)) / safe - means ** 2
    if prev is not None:
        dead = nk < 1e-10
        means[dead] = prev.means[dead]
        variances[dead] = prev.variances[dead]
    variances = np.maximum(variances, var_floor)
    return GmmModel(nk / total, means, variances)


def train_ubm(features, k: int, iters: int = 10, seed: int = 0, kmeans_iters: int = 10,
              kmeans_sample: int = 20000, floor_ratio: float = 1e-4) -> GmmModel:
    """Fit a k-component diagonal GMM by EM after a seeded k-means start.

    ``features`` is a list of ``(T, F)`` matrices (or one stacked matrix).
    The returned model carries the per-iteration total log-likelihood in
    ``history`` (initial model first).
    """
    x = _stack(features)
    if k < 1:
        raise TrainingError(f"component count must be positive, got {k}")
    if k > len(x):
        raise TrainingError(f"{k} components requested but only {len(x)} frames available")
    if len(x) < 10 * k:
        log.warning("only %d frames for %d components", len(x), k)

    rng = np.random.default_rng(seed)
    var_floor = floor_ratio * np.maximum(x.var(axis=0), 1e-12)
    sample = x[rng.choice(len(x), size=min(len(x), kmeans_sample), replace=False)] if len(x) > kmeans_sample else x
    centers = kmeans(sample, k, kmeans_iters, rng)

    d2 = np.sum(x ** 2, axis=1)[:, None] - 2.0 * x @ centers.T + np.sum(centers ** 2, axis=1)
    hard = np.zeros((len(x), k))
    hard[np.arange(len(x)), np.argmin(d2, axis=1)] = 1.0
    empty = hard.sum(axis=0) == 0
    model = _m_step(x, hard, var_floor)
    if np.any(empty):
        # unclaimed centers keep their location with a small weight
        weights = np.where(empty, 1.0 / len(x), model.weights)
        means = np.where(empty[:, None], centers, model.means)
        variances = np.where(empty[:, None], np.maximum(x.var(axis=0), var_floor), model.variances)
        model = GmmModel(weights / weights.sum(), means, variances)

    history = []
    for _ in range(iters):
        lp = model.component_log_densities(x)
        norm = logsumexp(lp, axis=1, keepdims=True)
        history.append(float(norm.sum()))
        model = _m_step(x, np.exp(lp - norm), var_floor, prev=model)
    history.append(model.log_likelihood(x))
    model.history = tuple(history)
    return model
