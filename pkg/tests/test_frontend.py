import numpy as np
import pytest

from speechmark.corpus import AudioSignal
from speechmark.errors import EmptyInputError, InputError
from speechmark.frontend import (
    FrontendConfig,
    cmvn,
    extract_mfcc,
    read_feature_cache,
    write_feature_cache,
)


def naive_mfcc_frame(frame, cfg):
    """Straight-line reference: explicit DFT sum, loop-built mel filters, explicit DCT-II."""
    n = len(frame)
    win = np.array([0.54 - 0.46 * np.cos(2 * np.pi * i / (n - 1)) for i in range(n)])
    x = frame * win
    nfft = cfg.n_fft
    mags = []
    for k in range(nfft // 2 + 1):
        acc = 0j
        for t in range(n):
            acc += x[t] * np.exp(-2j * np.pi * k * t / nfft)
        mags.append(abs(acc))
    mags = np.array(mags)

    def mel(f):
        return 2595.0 * np.log10(1 + f / 700.0)

    def inv(m):
        return 700.0 * (10 ** (m / 2595.0) - 1)

    top = mel(cfg.sample_rate / 2)
    pts = [inv(top * i / (cfg.n_mels + 1)) for i in range(cfg.n_mels + 2)]
    energies = []
    for m in range(cfg.n_mels):
        lo, c, hi = pts[m], pts[m + 1], pts[m + 2]
        e = 0.0
        for k in range(nfft // 2 + 1):
            f = k * cfg.sample_rate / nfft
            if lo < f <= c:
                e += mags[k] * (f - lo) / (c - lo)
            elif c < f < hi:
                e += mags[k] * (hi - f) / (hi - c)
        energies.append(np.log(max(e, cfg.log_floor)))
    m_count = cfg.n_mels
    ceps = []
    for q in range(cfg.n_ceps):
        s = sum(energies[j] * np.cos(np.pi * q * (2 * j + 1) / (2 * m_count)) for j in range(m_count))
        ceps.append(s * (np.sqrt(1.0 / m_count) if q == 0 else np.sqrt(2.0 / m_count)))
    return np.array(ceps)


class TestMfcc:
    def test_frame_count(self):
        sig = AudioSignal(np.random.default_rng(0).standard_normal(16000), 16000)
        assert extract_mfcc(sig).shape == (98, 20)

    def test_silence_frames_identical(self):
        feats = extract_mfcc(AudioSignal(np.zeros(8000), 16000))
        assert np.all(feats == feats[0])

    def test_matches_naive_oracle(self):
        cfg = FrontendConfig(n_ceps=13, n_mels=23)
        rng = np.random.default_rng(7)
        samples = rng.standard_normal(4000) * 0.1
        feats = extract_mfcc(AudioSignal(samples, 16000), cfg)
        emph = np.append(samples[:1], samples[1:] - 0.97 * samples[:-1])
        for t in rng.choice(len(feats), size=3, replace=False):
            start = t * cfg.shift_samples
            ref = naive_mfcc_frame(emph[start:start + cfg.window_samples], cfg)
            np.testing.assert_allclose(feats[t], ref, rtol=1e-8, atol=1e-8)

    def test_c0_tracks_energy(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal(400 * 3)
        sig = np.concatenate([base[:400] * 0.01, base[400:800] * 0.1, base[800:] * 1.0])
        feats = extract_mfcc(AudioSignal(sig, 16000), FrontendConfig(frame_shift=0.025))
        assert feats[0, 0] < feats[1, 0] < feats[2, 0]

    def test_gain_only_moves_c0(self):
        sig = np.random.default_rng(2).standard_normal(8000)
        a = extract_mfcc(AudioSignal(sig, 16000))
        b = extract_mfcc(AudioSignal(3.0 * sig, 16000))
        np.testing.assert_allclose(a[:, 1:], b[:, 1:], atol=1e-6)
        assert np.all(b[:, 0] > a[:, 0])

    def test_trailing_silence(self):
        sig = np.random.default_rng(3).standard_normal(8000)
        a = extract_mfcc(AudioSignal(sig, 16000))
        b = extract_mfcc(AudioSignal(np.append(sig, np.zeros(100)), 16000))
        assert len(b) - len(a) in (0, 1)
        np.testing.assert_allclose(b[: len(a)], a)

    def test_too_short(self):
        with pytest.raises(EmptyInputError):
            extract_mfcc(AudioSignal(np.ones(100), 16000))

    def test_rate_mismatch(self):
        with pytest.raises(InputError):
            extract_mfcc(AudioSignal(np.ones(8000), 8000))

    def test_vad_drops_quiet_frames(self):
        rng = np.random.default_rng(4)
        sig = np.concatenate([rng.standard_normal(4000), 1e-6 * rng.standard_normal(4000)])
        full = extract_mfcc(AudioSignal(sig, 16000))
        voiced = extract_mfcc(AudioSignal(sig, 16000), FrontendConfig(vad=True))
        assert 0 < len(voiced) < len(full)


class TestCmvn:
    def test_constant_column(self):
        x = np.random.default_rng(0).standard_normal((50, 4))
        x[:, 2] = 3.0
        out = cmvn(x)
        assert np.all(out[:, 2] == 0.0)
        assert np.all(np.isfinite(out))

    def test_idempotent(self):
        x = cmvn(np.random.default_rng(1).standard_normal((60, 5)))
        np.testing.assert_allclose(cmvn(x), x, atol=1e-6)

    def test_zero_mean_unit_variance(self):
        out = cmvn(np.random.default_rng(2).standard_normal((100, 20)) * 5 + 2)
        assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
        np.testing.assert_allclose(out.var(axis=0), 1.0)

    def test_degenerate(self):
        with pytest.raises(InputError):
            cmvn(np.ones((1, 3)))


def test_feature_cache_roundtrip(tmp_path):
    x = np.random.default_rng(0).standard_normal((17, 6))
    write_feature_cache(tmp_path / "f.feat", x)
    raw = (tmp_path / "f.feat").read_bytes()
    assert raw[:8] == (17).to_bytes(4, "little") + (6).to_bytes(4, "little")
    np.testing.assert_array_equal(read_feature_cache(tmp_path / "f.feat"), x.astype(np.float32))
