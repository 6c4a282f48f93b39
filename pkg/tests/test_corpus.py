import numpy as np
import pytest

from speechmark.corpus import (
    Label,
    assign_folds,
    load_manifest,
    normalize_transcript,
    read_audio,
    write_wav,
)
from speechmark.errors import EmptyInputError, FormatError, IngestError, ParseError


def _manifest(tmp_path, labels, missing=None):
    lines = ["id,audio,transcript,label"]
    for i, lab in enumerate(labels):
        (tmp_path / f"{i}.wav").write_bytes(b"")
        if missing != i:
            (tmp_path / f"{i}.txt").write_text("*PAR: hello .")
        lines.append(f"r{i},{i}.wav,{i}.txt,{lab}")
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


class TestManifest:
    def test_ten_rows_one_per_fold(self, tmp_path):
        path = _manifest(tmp_path, ["Dementia"] * 5 + ["Control"] * 5)
        for seed in range(5):
            recs = load_manifest(path, k_folds=10, seed=seed)
            assert sorted(r.fold for r in recs) == list(range(10))

    def test_pitt_sized_stratification(self):
        labels = [Label.CONTROL] * 243 + [Label.DEMENTIA] * 309
        folds = assign_folds(labels, 10, seed=3)
        labels = np.array([lab.value for lab in labels])
        for f in range(10):
            n_con = np.sum((folds == f) & (labels == "Control"))
            n_dem = np.sum((folds == f) & (labels == "Dementia"))
            assert n_con in (24, 25)
            assert n_dem in (30, 31)

    def test_deterministic(self, tmp_path):
        path = _manifest(tmp_path, ["Dementia", "Control"] * 7)
        a = load_manifest(path, k_folds=3, seed=11)
        b = load_manifest(path, k_folds=3, seed=11)
        assert [r.fold for r in a] == [r.fold for r in b]

    def test_partition_and_balance(self):
        rng = np.random.default_rng(0)
        labels = [Label.DEMENTIA if x else Label.CONTROL for x in rng.random(97) < 0.4]
        folds = assign_folds(labels, 7, seed=1)
        assert set(folds) == set(range(7))
        for lab in Label:
            counts = np.bincount(folds[[x is lab for x in labels]], minlength=7)
            assert counts.max() - counts.min() <= 1

    def test_missing_file_names_row(self, tmp_path):
        path = _manifest(tmp_path, ["Dementia", "Control"], missing=1)
        with pytest.raises(IngestError, match="r1"):
            load_manifest(path)

    def test_unknown_label(self, tmp_path):
        path = _manifest(tmp_path, ["Dementia", "Healthy"])
        with pytest.raises(ParseError, match="Healthy"):
            load_manifest(path)

    def test_duplicate_id(self, tmp_path):
        path = _manifest(tmp_path, ["Dementia", "Control"])
        path.write_text(path.read_text() + "r0,0.wav,0.txt,Control\n")
        with pytest.raises(ParseError, match="duplicate"):
            load_manifest(path)


class TestAudio:
    def test_identity_resample(self, tmp_path):
        pcm = np.array([0, 1000, -32768, 32767, 5], dtype="<i2")
        write_wav(tmp_path / "a.wav", pcm / 32768.0)
        sig = read_audio(tmp_path / "a.wav", 16000)
        np.testing.assert_array_equal(sig.samples, pcm / 32768.0)
        assert sig.sample_rate == 16000

    def test_stereo_identical_channels(self, tmp_path):
        import wave

        pcm = (np.sin(np.arange(200) / 7.0) * 20000).astype("<i2")
        with wave.open(str(tmp_path / "s.wav"), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(np.repeat(pcm, 2).tobytes())
        sig = read_audio(tmp_path / "s.wav")
        np.testing.assert_array_equal(sig.samples, pcm / 32768.0)

    def test_upsample_constant(self, tmp_path):
        write_wav(tmp_path / "c.wav", np.full(800, 0.25), sample_rate=8000)
        sig = read_audio(tmp_path / "c.wav", 16000)
        assert abs(len(sig.samples) - 1600) <= 1
        np.testing.assert_allclose(sig.samples, 0.25)

    def test_eight_bit(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "b.wav"), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(16000)
            wf.writeframes(bytes([128, 192, 64]))
        np.testing.assert_allclose(read_audio(tmp_path / "b.wav").samples, [0.0, 0.5, -0.5])

    def test_empty_audio(self, tmp_path):
        write_wav(tmp_path / "e.wav", np.zeros(0))
        with pytest.raises(EmptyInputError):
            read_audio(tmp_path / "e.wav")

    def test_not_wav(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"definitely not riff data")
        with pytest.raises(FormatError):
            read_audio(tmp_path / "x.wav")


class TestTranscripts:
    def test_chat_stripping(self):
        assert normalize_transcript("*PAR: the boy [//] is falling .", True) == ["the", "boy", "is", "falling"]

    def test_lowercase_without_stripping(self):
        assert normalize_transcript("Hello HELLO hello", False) == ["hello"] * 3

    def test_investigator_line_removed(self):
        assert normalize_transcript("*INV: tell me more .", True) == []

    def test_fillers_and_continuations(self):
        raw = "@Begin\n*PAR:\t&uh the &=laughs girl [: gal] is\n\twashing dishes .\n*INV:\tok .\n@End\n"
        assert normalize_transcript(raw) == ["the", "girl", "is", "washing", "dishes"]

    def test_bare_filler_flag(self):
        raw = "*PAR: um the boy uh falls ."
        assert normalize_transcript(raw, keep_fillers=True) == ["um", "the", "boy", "uh", "falls"]
        assert normalize_transcript(raw, keep_fillers=False) == ["the", "boy", "falls"]

    def test_no_empty_tokens(self):
        toks = normalize_transcript("*PAR: , ... ' ?? word's !", True)
        assert toks == ["word's"]
