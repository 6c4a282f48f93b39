"""Dataset manifests, audio/transcript reading and fold assignment."""

from __future__ import annotations

import csv
import enum
import re
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, FormatError, IngestError, ParseError

CANONICAL_RATE = 16000
MANIFEST_COLUMNS = ("id", "audio", "transcript", "label")

FILLER_WORDS = frozenset({"uh", "um", "er", "erm", "ah", "hm", "hmm", "mm", "eh"})


class Label(enum.Enum):
    DEMENTIA = "Dementia"
    CONTROL = "Control"

    @property
    def sign(self) -> int:
        """+1 for the positive (dementia) class, -1 for control."""
        return 1 if self is Label.DEMENTIA else -1

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().lower()
        for label in cls:
            if label.value.lower() == key:
                return label
        raise ParseError(f"unknown label {text!r}; expected Dementia or Control")


@dataclass(frozen=True)
class Recording:
    id: str
    audio_path: Path
    transcript_path: Path
    label: Label
    fold: int


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise FormatError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def assign_folds(labels, k_folds: int, seed: int) -> np.ndarray:
    """Stratified round-robin fold ids.

    Each label group is shuffled with a generator seeded by ``seed`` and dealt
    out in turn; the dealing position carries over between groups so overall
    fold sizes stay balanced as well.
    """
    if k_folds < 1:
        raise ParseError(f"k_folds must be >= 1, got {k_folds}")
    labels = list(labels)
    folds = np.empty(len(labels), dtype=int)
    rng = np.random.default_rng(seed)
    cursor = 0
    for label in sorted(set(labels), key=lambda lab: lab.value):
        members = np.array([i for i, lab in enumerate(labels) if lab == label])
        members = members[rng.permutation(len(members))]
        folds[members] = (cursor + np.arange(len(members))) % k_folds
        cursor = (cursor + len(members)) % k_folds
    return folds


def load_manifest(path, k_folds: int = 10, seed: int = 0, check_files: bool = True) -> list[Recording]:
    """Read an ``id,audio,transcript,label`` CSV manifest and assign folds.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"manifest not found: {path}")
    base = path.parent
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != MANIFEST_COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            rid, audio, transcript, label = (cell.strip() for cell in row)
            try:
                parsed = Label.parse(label)
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno} (id {rid}): {exc}") from None
            audio_path = (base / audio).resolve()
            transcript_path = (base / transcript).resolve()
            if check_files:
                for kind, p in (("audio", audio_path), ("transcript", transcript_path)):
                    if not p.is_file():
                        raise IngestError(f"{path}:{lineno} (id {rid}): missing {kind} file {p}")
            rows.append((rid, audio_path, transcript_path, parsed))

    seen = set()
    for rid, *_ in rows:
        if rid in seen:
            raise ParseError(f"{path}: duplicate id {rid!r}")
        seen.add(rid)

    folds = assign_folds([r[3] for r in rows], k_folds, seed)
    return [Recording(rid, a, t, lab, int(f)) for (rid, a, t, lab), f in zip(rows, folds)]


def write_manifest(path, recordings) -> None:
    path = Path(path)
    base = path.parent.resolve()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for rec in recordings:
            writer.writerow([
                rec.id,
                _relative(rec.audio_path, base),
                _relative(rec.transcript_path, base),
                rec.label.value,
            ])


def _relative(p, base):
    p = Path(p).resolve()
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


def resample_linear(samples: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    if rate == target_rate:
        return samples
    n_out = int(round(len(samples) * target_rate / rate))
    positions = np.arange(n_out) * (rate / target_rate)
    return np.interp(positions, np.arange(len(samples)), samples)


def read_audio(path, target_rate: int = CANONICAL_RATE) -> AudioSignal:
    """Read a PCM WAV file as mono float samples in [-1, 1] at ``target_rate``."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a PCM WAV file ({exc})") from None

    if width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    else:
        raise FormatError(f"{path}: unsupported sample width {8 * width} bits")
    if data.size == 0:
        raise EmptyInputError(f"{path}: zero-length audio")

    data = data.reshape(-1, n_channels).mean(axis=1)
    return AudioSignal(resample_linear(data, rate, target_rate), target_rate)


def write_wav(path, samples, sample_rate: int = CANONICAL_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


_BRACKET_CODE = re.compile(r"\[[^\]]*\]")
_MEDIA_BULLET = re.compile(r"\x15[^\x15]*\x15")
_PUNCT = re.compile(r"[^\w\s']")


def _participant_text(raw: str) -> str:
    kept = []
    active = False
    for line in raw.splitlines():
        if line.startswith("*"):
            active = line.startswith("*PAR:")
            if active:
                kept.append(line[len("*PAR:"):])
        elif line.startswith(("\t", " ")) and active:
            # CHAT continuation of the previous tier
            kept.append(line)
        else:
            active = False
    return " ".join(kept)


def normalize_transcript(raw: str, strip_chat_markup: bool = True, keep_fillers: bool = True) -> list[str]:
    """Turn transcript text into a lowercase word list.

    With ``strip_chat_markup`` only ``*PAR:`` tiers survive and bracketed
    codes, ``&``-prefixed tokens and punctuation are dropped. ``keep_fillers``
    controls bare filler words such as "uh" and "um".
    """
    text = raw
    if strip_chat_markup:
        text = _participant_text(text)
        text = _MEDIA_BULLET.sub(" ", text)
        text = _BRACKET_CODE.sub(" ", text)
        text = " ".join(tok for tok in text.split() if not tok.startswith("&"))
        text = _PUNCT.sub(" ", text)
    tokens = [tok.strip("'") for tok in text.lower().split()]
    tokens = [tok for tok in tokens if tok]
    if not keep_fillers:
        tokens = [tok for tok in tokens if tok not in FILLER_WORDS]
    return tokens


def read_transcript(path, strip_chat_markup: bool = True, keep_fillers: bool = True) -> list[str]:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read transcript {path}: {exc}") from None
    return normalize_transcript(raw, strip_chat_markup, keep_fillers)
