import json
import logging
import subprocess
import sys

import pytest

from speechmark.cli import main

TINY = """\
[paths]
manifest = {manifest}
work_dir = {work}

[ubm]
components = 4
iters = 3
seed = 0

[ivector]
rank = 3
iters = 2
seed = 0

[xvector]
frame_dim = 8
pre_pool_dim = 16
seg6_dim = 4
seg7_dim = 4
contexts = compact
epochs = 3
batch_size = 8
min_chunk = 30
max_chunk = 60
seed = 0

[svm]
steps = 200

[cv]
k_folds = 4
seed = 0
"""


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth-data", "--out", str(out), "--cases", "16", "--duration", "1.0", "-q"]) == 0
    return out / "manifest.csv"


def write_config(tmp_path, manifest, work="work"):
    path = tmp_path / "run.cfg"
    path.write_text(TINY.format(manifest=manifest, work=tmp_path / work))
    return path


class TestUsage:
    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["bake-bread"])
        assert exc.value.code == 2

    def test_missing_manifest_names_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("[ubm]\nseed = 0\n[ivector]\nseed = 0\n[xvector]\nseed = 0\n[cv]\nseed = 0\n")
        assert main(["evaluate", "--config", str(cfg)]) == 2
        assert "paths.manifest" in capsys.readouterr().err

    def test_missing_seed(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("[paths]\nmanifest = m.csv\n")
        assert main(["evaluate", "--config", str(cfg)]) == 2
        assert "ubm.seed" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, corpus, capsys):
        cfg = write_config(tmp_path, corpus)
        assert main(["ingest-validate", "--config", str(cfg), "--ubm.colour", "red"]) == 2
        assert "ubm.colour" in capsys.readouterr().err

    def test_stage_failure(self, tmp_path, corpus, capsys):
        broken = tmp_path / "broken.csv"
        broken.write_text(corpus.read_text().replace("audio/A0000.wav", "audio/missing.wav"))
        for name in ("audio", "text"):
            (tmp_path / name).symlink_to(corpus.parent / name)
        cfg = write_config(tmp_path, broken)
        assert main(["ingest-validate", "--config", str(cfg)]) == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and "A0000" in err[0]


class TestStages:
    def test_ingest_validate(self, tmp_path, corpus, capsys):
        cfg = write_config(tmp_path, corpus)
        assert main(["ingest-validate", "--config", str(cfg), "-q"]) == 0
        out = capsys.readouterr().out
        assert "16 recordings" in out
        summary = json.loads(next((tmp_path / "work").glob("ingest-*.json")).read_text())
        assert summary["labels"] == {"Control": 8, "Dementia": 8}

    def test_training_stages_and_cache(self, tmp_path, corpus, caplog):
        cfg = write_config(tmp_path, corpus)
        for stage in ("train-ngram", "train-ubm", "train-ivector", "train-xvector", "extract"):
            assert main([stage, "--config", str(cfg), "--jobs", "2"]) == 0
        work = tmp_path / "work"
        names = sorted(p.name.split("-")[0] for p in work.iterdir() if p.is_file())
        assert names == ["features", "ngram", "ngram", "tvm", "ubm", "xvector"]
        caplog.clear()
        with caplog.at_level(logging.INFO, logger="speechmark"):
            assert main(["train-ivector", "--config", str(cfg)]) == 0
        assert sum("cache hit" in r.message for r in caplog.records) == 2

    def test_fingerprint_in_filenames(self, tmp_path, corpus, capsys):
        cfg = write_config(tmp_path, corpus)
        main(["train-ubm", "--config", str(cfg), "-q"])
        main(["train-ubm", "--config", str(cfg), "-q", "--set", "ubm.components", "2"])
        assert len(list((tmp_path / "work").glob("ubm-*.gmm"))) == 2

    def test_env_override(self, tmp_path, corpus, monkeypatch):
        cfg = write_config(tmp_path, corpus)
        monkeypatch.setenv("SPEECHMARK_UBM__COMPONENTS", "2")
        main(["train-ubm", "--config", str(cfg), "-q"])
        monkeypatch.delenv("SPEECHMARK_UBM__COMPONENTS")
        main(["train-ubm", "--config", str(cfg), "-q", "--ubm.components=2"])
        assert len(list((tmp_path / "work").glob("ubm-*.gmm"))) == 1

    def test_evaluate_and_ablate(self, tmp_path, corpus, capsys):
        cfg = write_config(tmp_path, corpus)
        assert main(["evaluate", "--config", str(cfg), "-q"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("accuracy ")
        assert main(["ablate", "--config", str(cfg), "--grid", "table5", "-q"]) == 0
        jsonl = next((tmp_path / "work").glob("ablate-table5-*.jsonl"))
        assert len(jsonl.read_text().splitlines()) == 7


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "speechmark", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth-data" in proc.stdout
