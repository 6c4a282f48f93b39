"""TDNN x-vector network: spliced frame layers, statistics pooling, segment layers.

Everything is plain numpy with a hand-written backward pass. Frame layers
only produce outputs at positions where their whole context is available,
so each layer shortens the sequence by its context span.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, TrainingError

log = logging.getLogger(__name__)

# Frame-layer contexts as listed in the standard x-vector table:
# [t-4, t+4], {t-4, t, t+4}, {t-5, t, t+5}, {t}, {t}.
TABLE_CONTEXTS = (tuple(range(-4, 5)), (-4, 0, 4), (-5, 0, 5), (0,), (0,))
# Narrower contexts whose cumulative receptive field is 15 frames.
COMPACT_CONTEXTS = (tuple(range(-2, 3)), (-2, 0, 2), (-3, 0, 3), (0,), (0,))
CONTEXT_FREE = ((0,),) * 5

LAYER_NAMES = ("frame1", "frame2", "frame3", "frame4", "frame5", "segment6", "segment7", "output")

_MAGIC = b"SMXVN\0"
_VERSION = 1


@dataclass(frozen=True)
class XvectorConfig:
    feat_dim: int = 20
    frame_layer_dims: tuple = (64, 64, 64, 64)
    pre_pool_dim: int = 256
    segment_dims: tuple = (64, 64)
    n_classes: int = 2
    contexts: tuple = TABLE_CONTEXTS
    std_floor: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "frame_layer_dims", tuple(int(d) for d in self.frame_layer_dims))
        object.__setattr__(self, "segment_dims", tuple(int(d) for d in self.segment_dims))
        object.__setattr__(self, "contexts", tuple(tuple(sorted(int(o) for o in c)) for c in self.contexts))
        if len(self.frame_layer_dims) != 4 or len(self.contexts) != 5 or len(self.segment_dims) != 2:
            raise InputError("need 4 frame widths (layers 1-4), 5 contexts and 2 segment widths")
        if self.n_classes < 2:
            raise InputError("need at least two output classes")

    @classmethod
    def paper_scale(cls, feat_dim: int = 20, n_classes: int = 2) -> "XvectorConfig":
        return cls(feat_dim, (128, 128, 128, 128), 7500, (128, 128), n_classes)

    @property
    def receptive_field(self) -> int:
        return 1 + sum(c[-1] - c[0] for c in self.contexts)

    @property
    def embedding_dim(self) -> int:
        return self.segment_dims[0]

    def layer_shapes(self) -> list[tuple[int, int]]:
        outs = [*self.frame_layer_dims, self.pre_pool_dim]
        ins = [self.feat_dim, *outs[:-1]]
        shapes = [(len(c) * d_in, d_out) for c, d_in, d_out in zip(self.contexts, ins, outs)]
        seg6, seg7 = self.segment_dims
        shapes += [(2 * self.pre_pool_dim, seg6), (seg6, seg7), (seg7, self.n_classes)]
        return shapes


def splice(h: np.ndarray, offsets) -> np.ndarray:
    """Concatenate frames at ``t + o`` for each offset; only fully covered t are kept."""
    span = offsets[-1] - offsets[0]
    t_out = h.shape[1] - span
    return np.concatenate([h[:, o - offsets[0]:o - offsets[0] + t_out] for o in offsets], axis=-1)


def _unsplice(grad: np.ndarray, offsets, t_in: int) -> np.ndarray:
    b, t_out, width = grad.shape
    d_in = width // len(offsets)
    out = np.zeros((b, t_in, d_in))
    for j, o in enumerate(offsets):
        start = o - offsets[0]
        out[:, start:start + t_out] += grad[..., j * d_in:(j + 1) * d_in]
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class XvectorNet:
    def __init__(self, config: XvectorConfig, params: dict | None = None, seed: int = 0,
                 zero_output: bool = True):
        self.config = config
        if params is None:
            params = self._init_params(seed, zero_output)
        for name, (d_in, d_out) in zip(LAYER_NAMES, config.layer_shapes()):
            if params[name + ".W"].shape != (d_in, d_out) or params[name + ".b"].shape != (d_out,):
                raise InputError(f"parameter shapes for {name} do not match the configuration")
        self.params = params
        self.history: list[dict] = []

    def _init_params(self, seed: int, zero_output: bool) -> dict:
        rng = np.random.default_rng(seed)
        params = {}
        for name, (d_in, d_out) in zip(LAYER_NAMES, self.config.layer_shapes()):
            if name == "output" and zero_output:
                w = np.zeros((d_in, d_out))
            else:
                w = rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)
            params[name + ".W"] = w
            params[name + ".b"] = np.zeros(d_out)
        return params

    # -- forward / backward

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.config.feat_dim:
            raise InputError(f"expected (batch, frames, {self.config.feat_dim}) features, got {x.shape}")
        if x.shape[1] < self.config.receptive_field:
            raise InputError(f"{x.shape[1]} frames is shorter than the {self.config.receptive_field}-frame receptive field")
        return x

    def _forward(self, x: np.ndarray):
        p = self.params
        cache = {"frames": []}
        h = x
        for i, offsets in enumerate(self.config.contexts, start=1):
            s = splice(h, offsets)
            z = s @ p[f"frame{i}.W"] + p[f"frame{i}.b"]
            cache["frames"].append((h.shape[1], s, z))
            h = np.maximum(z, 0.0)
        # pool over time-sorted values so the statistics depend on the set of frames, not their order,
        # down to the last bit
        ordered = np.sort(h, axis=1)
        mean = ordered.mean(axis=1)
        std = np.sqrt(ordered.var(axis=1) + self.config.std_floor)
        stats = np.concatenate([mean, std], axis=-1)
        z6 = stats @ p["segment6.W"] + p["segment6.b"]
        a6 = np.maximum(z6, 0.0)
        z7 = a6 @ p["segment7.W"] + p["segment7.b"]
        a7 = np.maximum(z7, 0.0)
        logits = a7 @ p["output.W"] + p["output.b"]
        cache.update(h5=h, mean=mean, std=std, stats=stats, z6=z6, a6=a6, z7=z7, a7=a7)
        return _softmax(logits), z6, cache

    def forward(self, features):
        """Class posteriors and the segment6 pre-activation embedding.

        A single ``(T, F)`` matrix gives a ``(L,)`` probability vector and a
        ``(seg6,)`` embedding; a ``(B, T, F)`` batch keeps the leading axis.
        """
        single = np.ndim(features) == 2
        probs, emb, _ = self._forward(self._check_input(features))
        return (probs[0], emb[0]) if single else (probs, emb)

    def pooled_stats(self, features) -> np.ndarray:
        return self._forward(self._check_input(features))[2]["stats"]

    def embed(self, features) -> np.ndarray:
        return self.forward(features)[1]

    def loss_and_grads(self, features, labels):
        """Mean cross-entropy over the batch and its gradient for every parameter."""
        loss, grads, _ = self._loss_grads(self._check_input(features), labels)
        return loss, grads

    def _loss_grads(self, x, labels):
        labels = np.asarray(labels, dtype=int).reshape(-1)
        probs, _, c = self._forward(x)
        b = len(labels)
        loss = -np.mean(np.log(np.maximum(probs[np.arange(b), labels], 1e-300)))

        p = self.params
        g = {}
        d_logits = probs.copy()
        d_logits[np.arange(b), labels] -= 1.0
        d_logits /= b
        g["output.W"] = c["a7"].T @ d_logits
        g["output.b"] = d_logits.sum(axis=0)
        d_z7 = (d_logits @ p["output.W"].T) * (c["z7"] > 0)
        g["segment7.W"] = c["a6"].T @ d_z7
        g["segment7.b"] = d_z7.sum(axis=0)
        d_z6 = (d_z7 @ p["segment7.W"].T) * (c["z6"] > 0)
        g["segment6.W"] = c["stats"].T @ d_z6
        g["segment6.b"] = d_z6.sum(axis=0)
        d_stats = d_z6 @ p["segment6.W"].T

        dim = self.config.pre_pool_dim
        h5, mean, std = c["h5"], c["mean"], c["std"]
        t5 = h5.shape[1]
        d_h = (d_stats[:, None, :dim] + d_stats[:, None, dim:] * (h5 - mean[:, None]) / std[:, None]) / t5

        for i in range(5, 0, -1):
            t_in, s, z = c["frames"][i - 1]
            d_z = d_h * (z > 0)
            g[f"frame{i}.W"] = s.reshape(-1, s.shape[-1]).T @ d_z.reshape(-1, d_z.shape[-1])
            g[f"frame{i}.b"] = d_z.sum(axis=(0, 1))
            if i > 1:
                d_h = _unsplice(d_z @ p[f"frame{i}.W"].T, self.config.contexts[i - 1], t_in)
        return loss, g, probs

    # -- persistence

    def to_bytes(self) -> bytes:
        header = json.dumps(asdict(self.config), sort_keys=True).encode("utf-8")
        body = b"".join(self.params[f"{n}.{k}"].astype("<f8").tobytes() for n in LAYER_NAMES for k in "Wb")
        return _MAGIC + struct.pack("<II", _VERSION, len(header)) + header + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "XvectorNet":
        if data[:6] != _MAGIC:
            raise FormatError("not an x-vector network file")
        version, n_header = struct.unpack_from("<II", data, 6)
        if version != _VERSION:
            raise FormatError(f"unsupported x-vector file version {version}")
        start = 14 + n_header
        config = XvectorConfig(**json.loads(data[14:start].decode("utf-8")))
        flat = np.frombuffer(data, dtype="<f8", offset=start)
        params, pos = {}, 0
        for name, (d_in, d_out) in zip(LAYER_NAMES, config.layer_shapes()):
            params[name + ".W"] = flat[pos:pos + d_in * d_out].reshape(d_in, d_out).copy()
            pos += d_in * d_out
            params[name + ".b"] = flat[pos:pos + d_out].copy()
            pos += d_out
        if pos != flat.size:
            raise FormatError("x-vector file size does not match its configuration")
        return cls(config, params)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "XvectorNet":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 30
    batch_size: int = 16
    min_chunk: int = 200
    max_chunk: int = 400
    chunks_per_recording: int = 1
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 0.5
    decay_every: int = 10
    grad_clip: float = 5.0
    noise_snr_db: float | None = None
    seed: int = 0


def _add_noise(chunk: np.ndarray, snr_db: float, rng) -> np.ndarray:
    power = np.mean(chunk ** 2)
    return chunk + rng.standard_normal(chunk.shape) * np.sqrt(power / 10.0 ** (snr_db / 10.0))


def train_xvector(net: XvectorNet, dataset, opts: TrainOptions = TrainOptions()) -> XvectorNet:
    """Minibatch SGD with momentum on cross-entropy over random fixed-length chunks.

    ``dataset`` is a sequence of ``(features, class_index)`` pairs. Each
    minibatch draws one chunk length from ``[min_chunk, max_chunk]`` frames
    (capped by the shortest recording in the batch). ``net`` is updated in
    place and returned; per-epoch loss and accuracy land in ``net.history``.
    """
    feats = [np.asarray(f, dtype=np.float64) for f, _ in dataset]
    labels = np.array([int(y) for _, y in dataset])
    if len(set(labels.tolist())) < 2:
        raise TrainingError("x-vector training needs at least two classes")
    if labels.min() < 0 or labels.max() >= net.config.n_classes:
        raise TrainingError(f"labels must lie in [0, {net.config.n_classes})")
    too_short = [i for i, f in enumerate(feats) if len(f) < net.config.receptive_field]
    if too_short:
        raise TrainingError(f"{len(too_short)} recordings are shorter than the receptive field")

    rng = np.random.default_rng(opts.seed)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    for epoch in range(opts.epochs):
        lr = opts.lr * opts.lr_decay ** (epoch // max(opts.decay_every, 1))
        order = np.tile(np.arange(len(feats)), opts.chunks_per_recording)
        order = order[rng.permutation(len(order))]
        losses, correct = [], 0
        for start in range(0, len(order), opts.batch_size):
            batch = order[start:start + opts.batch_size]
            shortest = min(len(feats[i]) for i in batch)
            length = min(int(rng.integers(opts.min_chunk, opts.max_chunk + 1)), shortest)
            chunks = []
            for i in batch:
                offset = int(rng.integers(0, len(feats[i]) - length + 1))
                chunk = feats[i][offset:offset + length]
                if opts.noise_snr_db is not None:
                    chunk = _add_noise(chunk, opts.noise_snr_db, rng)
                chunks.append(chunk)
            loss, grads, probs = net._loss_grads(net._check_input(np.stack(chunks)), labels[batch])
            correct += int(np.sum(np.argmax(probs, axis=1) == labels[batch]))
            norm = np.sqrt(sum(np.sum(g ** 2) for g in grads.values()))
            scale = min(1.0, opts.grad_clip / norm) if norm > 0 else 1.0
            for k, g in grads.items():
                velocity[k] = opts.momentum * velocity[k] - lr * scale * g
                net.params[k] += velocity[k]
            losses.append(loss * len(batch))
        record = {"epoch": epoch, "loss": float(np.sum(losses) / len(order)), "accuracy": correct / len(order)}
        net.history.append(record)
        log.debug("x-vector epoch %(epoch)d loss %(loss).4f acc %(accuracy).3f", record)
    return net


def embed(net: XvectorNet, features) -> np.ndarray:
    """Segment6 activations before the rectifier for a whole recording."""
    return net.embed(features)
