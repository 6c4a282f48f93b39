"""MFCC front end: framing, mel filterbank, cepstra and per-recording CMVN."""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .errors import EmptyInputError, FormatError, InputError


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    frame_length: float = 0.025
    frame_shift: float = 0.010
    n_ceps: int = 20
    n_mels: int = 23
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    low_freq: float = 0.0
    high_freq: float | None = None
    vad: bool = False
    vad_threshold_db: float = -40.0
    apply_cmvn: bool = True

    def __post_init__(self):
        if self.n_mels < self.n_ceps:
            raise InputError(f"n_mels ({self.n_mels}) must be >= n_ceps ({self.n_ceps})")
        if self.frame_shift <= 0 or self.frame_length <= 0:
            raise InputError("frame length and shift must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.frame_length * self.sample_rate))

    @property
    def shift_samples(self) -> int:
        return int(round(self.frame_shift * self.sample_rate))

    @property
    def n_fft(self) -> int:
        return 1 << (self.window_samples - 1).bit_length()

    def as_dict(self) -> dict:
        return asdict(self)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=float) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, low_freq: float = 0.0, high_freq=None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``(n_mels, n_fft // 2 + 1)``."""
    high_freq = sample_rate / 2.0 if high_freq is None else high_freq
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high_freq), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (center - lower)
    falling = (upper - bins) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(samples: np.ndarray, window: int, shift: int) -> np.ndarray:
    if len(samples) < window:
        raise EmptyInputError(f"signal of {len(samples)} samples is shorter than one {window}-sample window")
    n_frames = (len(samples) - window) // shift + 1
    return np.lib.stride_tricks.sliding_window_view(samples, window)[::shift][:n_frames]


def extract_mfcc(signal, config: FrontendConfig | None = None) -> np.ndarray:
    """MFCC matrix of shape ``(T, n_ceps)`` with ``T = (len - window) // shift + 1``.

    Pre-emphasis, Hamming window, magnitude spectrum, mel filterbank, floored
    log and an orthonormal DCT-II. CMVN is *not* applied here; see ``cmvn``.
    """
    config = config or FrontendConfig()
    samples = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    rate = getattr(signal, "sample_rate", config.sample_rate)
    if rate != config.sample_rate:
        raise InputError(f"signal rate {rate} Hz does not match front end rate {config.sample_rate} Hz")
    if samples.size == 0:
        raise EmptyInputError("empty signal")

    emphasized = np.append(samples[:1], samples[1:] - config.preemphasis * samples[:-1])
    frames = frame_signal(emphasized, config.window_samples, config.shift_samples)
    frames = frames * np.hamming(config.window_samples)
    spectrum = np.abs(np.fft.rfft(frames, n=config.n_fft))
    fbank = mel_filterbank(config.n_mels, config.n_fft, config.sample_rate, config.low_freq, config.high_freq)
    log_mel = np.log(np.maximum(spectrum @ fbank.T, config.log_floor))
    ceps = dct(log_mel, type=2, norm="ortho", axis=1)[:, : config.n_ceps]

    if config.vad:
        energy = np.log(np.maximum(np.sum(frames ** 2, axis=1), config.log_floor))
        keep = energy >= energy.max() + config.vad_threshold_db * np.log(10.0) / 10.0
        ceps = ceps[keep]
    return ceps


def cmvn(features: np.ndarray) -> np.ndarray:
    """Per-dimension mean and variance normalization of a ``(T, F)`` matrix.

    Dimensions with variance below 1e-10 are only centered.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise InputError(f"cmvn needs at least 2 frames, got shape {features.shape}")
    centered = features - features.mean(axis=0)
    std = features.std(axis=0)
    scale = np.where(std ** 2 < 1e-10, 1.0, std)
    return centered / scale


def features_for(signal, config: FrontendConfig | None = None) -> np.ndarray:
    config = config or FrontendConfig()
    feats = extract_mfcc(signal, config)
    return cmvn(feats) if config.apply_cmvn else feats


_CACHE_HEADER = struct.Struct("<II")


def write_feature_cache(path, features: np.ndarray) -> None:
    """Binary layout: ``(T, F)`` as little-endian uint32, then float32 frames."""
    features = np.asarray(features)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_CACHE_HEADER.pack(*features.shape))
        fh.write(features.astype("<f4").tobytes())
    tmp.replace(path)


def read_feature_cache(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise FormatError(f"{path}: truncated feature cache")
    t, f = _CACHE_HEADER.unpack_from(data)
    body = data[_CACHE_HEADER.size:]
    if len(body) != 4 * t * f:
        raise FormatError(f"{path}: expected {t}x{f} floats, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(t, f).astype(np.float64)
