"""Baum-Welch statistics, total-variability training and i-vector extraction."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigurationError, ConsistencyError, FormatError, InputError, TrainingError
from .gmm import GmmModel

_MAGIC = b"SMTVM\0"
_VERSION = 1
_HEADER = struct.Struct("<6sI16sIII")


@dataclass(frozen=True)
class BaumWelchStats:
    zero_order: np.ndarray   # (k,)
    first_order: np.ndarray  # (k, F), centered on the UBM means
    n_frames: int
    ubm_hash: str

    def supervector(self) -> np.ndarray:
        return self.first_order.reshape(-1)


def accumulate_stats(ubm: GmmModel, features) -> BaumWelchStats:
    """Zero- and first-order statistics of one recording against ``ubm``.

    Raises ConsistencyError if the soft counts do not add up to the frame count.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != ubm.dim:
        raise InputError(f"feature dimension {x.shape[1]} does not match UBM dimension {ubm.dim}")
    post = ubm.posteriors(x)
    n = post.sum(axis=0)
    f = post.T @ x - n[:, None] * ubm.means
    if abs(n.sum() - len(x)) > 1e-6:
        raise ConsistencyError(f"zero-order stats sum to {n.sum()!r} for {len(x)} frames")
    return BaumWelchStats(n, f, len(x), ubm.fingerprint())


@dataclass
class TotalVariabilityModel:
    t_matrix: np.ndarray  # (k*F, R)
    ubm: GmmModel
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        self.t_matrix = np.asarray(self.t_matrix, dtype=np.float64)
        kf = self.ubm.n_components * self.ubm.dim
        if self.t_matrix.ndim != 2 or self.t_matrix.shape[0] != kf:
            raise ConfigurationError(f"T must have {kf} rows, got shape {self.t_matrix.shape}")
        self.ubm_hash = self.ubm.fingerprint()
        self._precision = 1.0 / self.ubm.variances.reshape(-1)

    @property
    def rank(self) -> int:
        return self.t_matrix.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        """Diagonal of the block-diagonal supervector covariance."""
        return self.ubm.variances.reshape(-1)

    def _check(self, stats: BaumWelchStats):
        if stats.ubm_hash != self.ubm_hash:
            raise ConsistencyError(
                f"statistics were accumulated against UBM {stats.ubm_hash}, model expects {self.ubm_hash}"
            )

    def posterior(self, stats: BaumWelchStats):
        """Posterior of the latent factor: (mean, Cholesky factor of the precision, linear term)."""
        self._check(stats)
        t = self.t_matrix
        n_sv = np.repeat(stats.zero_order, self.ubm.dim)
        precision = np.eye(self.rank) + (t * (n_sv * self._precision)[:, None]).T @ t
        linear = t.T @ (self._precision * stats.supervector())
        cho = cho_factor(precision, lower=True)
        return cho_solve(cho, linear), cho, linear

    def extract(self, stats: BaumWelchStats) -> np.ndarray:
        return self.posterior(stats)[0]

    def objective(self, stats_list) -> float:
        """Mean per-utterance log-likelihood of the statistics, up to T-independent terms."""
        total = 0.0
        for stats in stats_list:
            mean, cho, linear = self.posterior(stats)
            total += 0.5 * linear @ mean - np.sum(np.log(np.diag(cho[0])))
        return total / len(stats_list)

    def to_bytes(self) -> bytes:
        k, f = self.ubm.means.shape
        return _HEADER.pack(_MAGIC, _VERSION, self.ubm_hash.encode("ascii"), k, f, self.rank) + \
            self.t_matrix.astype("<f8").tobytes()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, ubm: GmmModel) -> "TotalVariabilityModel":
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise FormatError(f"{path}: truncated T-matrix file")
        magic, version, ubm_hash, k, f, rank = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise FormatError(f"{path}: not a T-matrix v{_VERSION} file")
        if ubm_hash.decode("ascii") != ubm.fingerprint():
            raise ConsistencyError(f"{path}: trained against UBM {ubm_hash.decode()}, got {ubm.fingerprint()}")
        t = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if t.size != k * f * rank:
            raise FormatError(f"{path}: expected {k * f * rank} values, found {t.size}")
        return cls(t.reshape(k * f, rank).copy(), ubm)


def extract_ivector(model: TotalVariabilityModel, stats: BaumWelchStats) -> np.ndarray:
    """Posterior mean ``(I + T' S^-1 N T)^-1 T' S^-1 F`` via a Cholesky solve."""
    return model.extract(stats)


def train_t_matrix(stats_list, ubm: GmmModel, rank: int, iters: int = 10, seed: int = 0,
                   init_scale: float | None = None) -> TotalVariabilityModel:
    """EM for the total-variability matrix with the UBM means and covariances held fixed.

    E-step: posterior mean and covariance of w per utterance. M-step: each
    component's row block of T solves ``T_c A_c = C_c`` with
    ``A_c = sum_u N_uc E[w w']`` and ``C_c = sum_u F_uc E[w]'``.
    ``history`` records the mean objective before each update and after the last.
    """
    stats_list = list(stats_list)
    k, f = ubm.means.shape
    if rank < 1 or rank >= k * f:
        raise ConfigurationError(f"rank must be in [1, {k * f}), got {rank}")
    if not stats_list:
        raise TrainingError("no statistics to train on")
    if init_scale is None:
        init_scale = 0.1 * np.sqrt(ubm.variances.mean())
    rng = np.random.default_rng(seed)
    model = TotalVariabilityModel(rng.standard_normal((k * f, rank)) * init_scale, ubm)
    for stats in stats_list:
        model._check(stats)

    eye = np.eye(rank)
    history = []
    for _ in range(iters):
        acc_c = np.zeros((k * f, rank))
        acc_a = np.zeros((k, rank, rank))
        objective = 0.0
        for stats in stats_list:
            mean, cho, linear = model.posterior(stats)
            second = cho_solve(cho, eye) + np.outer(mean, mean)
            acc_c += np.outer(stats.supervector(), mean)
            acc_a += stats.zero_order[:, None, None] * second
            objective += 0.5 * linear @ mean - np.sum(np.log(np.diag(cho[0])))
        history.append(objective / len(stats_list))

        t_new = model.t_matrix.copy()
        for c in range(k):
            if np.trace(acc_a[c]) < 1e-10:
                continue
            rows = slice(c * f, (c + 1) * f)
            t_new[rows] = np.linalg.solve(acc_a[c], acc_c[rows].T).T
        model = TotalVariabilityModel(t_new, ubm)
    history.append(model.objective(stats_list))
    model.history = tuple(history)
    return model
