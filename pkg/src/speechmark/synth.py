"""Deterministic two-class synthetic corpus (transcripts + audio + manifest).

Each class has its own word Markov chain and its own acoustic source: a
mixture of band-limited noise "phones" picked segment by segment. Class A
is labelled Dementia, class B Control.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Label, Recording, write_manifest, write_wav

WORDS = (
    "the boy girl mother is are stealing cookies cookie jar from stool falling over sink water "
    "overflowing dishes washing she he window curtains kitchen plate and taking reaching"
).split()


@dataclass(frozen=True)
class SourceSpec:
    centers: tuple     # Hz, one band per mixture component
    weights: tuple
    bandwidth: float = 180.0


SOURCE_A = SourceSpec((350.0, 900.0, 1700.0, 2600.0), (0.4, 0.3, 0.2, 0.1))
SOURCE_B = SourceSpec((500.0, 1200.0, 2100.0, 3300.0), (0.1, 0.2, 0.3, 0.4))


def markov_chain(rng: np.random.Generator, n_words: int, concentration: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Start distribution and row-stochastic transition matrix; the extra last column is the end event."""
    start = rng.dirichlet(np.full(n_words, concentration))
    trans = rng.dirichlet(np.full(n_words + 1, concentration), size=n_words)
    # keep sentences reasonably long
    trans[:, -1] = 0.04
    trans /= trans.sum(axis=1, keepdims=True)
    return start, trans


def sample_sentence(rng, start, trans, max_len: int = 25) -> list[str]:
    words = [int(rng.choice(len(start), p=start))]
    while len(words) < max_len:
        nxt = int(rng.choice(trans.shape[1], p=trans[words[-1]]))
        if nxt == trans.shape[1] - 1:
            break
        words.append(nxt)
    return [WORDS[w] for w in words]


def chat_transcript(rng, sentences) -> str:
    lines = ["@Begin", "@Participants:\tPAR Participant, INV Investigator", "*INV:\ttell me what you see ."]
    for words in sentences:
        words = list(words)
        if rng.random() < 0.3:
            words.insert(int(rng.integers(0, len(words) + 1)), "&uh")
        if rng.random() < 0.2 and len(words) > 2:
            pos = int(rng.integers(1, len(words)))
            words.insert(pos, "[//]")
        lines.append("*PAR:\t" + " ".join(words) + " .")
        if rng.random() < 0.2:
            lines.append("*INV:\tmhm .")
    lines.append("@End")
    return "\n".join(lines) + "\n"


def band_noise(rng, n: int, center: float, bandwidth: float, rate: int) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    spectrum *= np.exp(-0.5 * ((freqs - center) / bandwidth) ** 2)
    out = np.fft.irfft(spectrum, n)
    return out / (np.std(out) + 1e-12)


def synth_audio(rng, source: SourceSpec, duration: float, rate: int = 16000) -> np.ndarray:
    """Concatenated 80-200 ms segments, each drawn from one source component."""
    n_total = int(duration * rate)
    jitter = 1.0 + 0.04 * rng.standard_normal()
    out = []
    filled = 0
    while filled < n_total:
        n = min(int(rng.uniform(0.08, 0.2) * rate), n_total - filled)
        j = int(rng.choice(len(source.centers), p=source.weights))
        seg = band_noise(rng, max(n, 32), source.centers[j] * jitter, source.bandwidth, rate)[:n]
        seg *= np.hanning(n) * 0.5 + 0.5
        out.append(seg)
        filled += n
    audio = np.concatenate(out)
    audio += 0.05 * rng.standard_normal(len(audio))
    return 0.25 * rng.uniform(0.6, 1.0) * audio / np.max(np.abs(audio))


def generate(out_dir, n_cases: int = 200, seed: int = 0, duration: float = 4.2,
             sentences: tuple = (4, 8), rate: int = 16000) -> list[Recording]:
    """Write ``audio/*.wav``, ``text/*.cha`` and ``manifest.csv`` under ``out_dir``.

    Half the cases (rounded up) belong to class A. Fold ids on the returned
    records are placeholders; load the manifest to assign real folds.
    """
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "text").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    chains = {Label.DEMENTIA: markov_chain(rng, len(WORDS)), Label.CONTROL: markov_chain(rng, len(WORDS))}
    sources = {Label.DEMENTIA: SOURCE_A, Label.CONTROL: SOURCE_B}

    records = []
    n_a = (n_cases + 1) // 2
    for i in range(n_cases):
        label = Label.DEMENTIA if i < n_a else Label.CONTROL
        rid = f"{'A' if label is Label.DEMENTIA else 'B'}{i:04d}"
        case_rng = np.random.default_rng([seed, i])
        start, trans = chains[label]
        n_sent = int(case_rng.integers(sentences[0], sentences[1] + 1))
        text = chat_transcript(case_rng, [sample_sentence(case_rng, start, trans) for _ in range(n_sent)])
        audio = synth_audio(case_rng, sources[label], duration + case_rng.uniform(0.0, 0.5), rate)
        audio_path = out / "audio" / f"{rid}.wav"
        text_path = out / "text" / f"{rid}.cha"
        write_wav(audio_path, audio, rate)
        text_path.write_text(text, encoding="utf-8")
        records.append(Recording(rid, audio_path, text_path, label, 0))
    write_manifest(out / "manifest.csv", records)
    return records
