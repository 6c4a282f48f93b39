import pytest

from speechmark.config import RunConfig, build_config, dump_config, env_overrides, load_config, read_config_file
from speechmark.errors import ConfigurationError

SEEDS = "[ubm]\nseed = 1\n[ivector]\nseed = 2\n[xvector]\nseed = 3\n[cv]\nseed = 4\n"


def write(tmp_path, text):
    path = tmp_path / "c.cfg"
    path.write_text(text)
    return path


class TestLoading:
    def test_types(self, tmp_path):
        cfg = load_config(write(tmp_path, SEEDS + "[ngram]\norder = 3\nstrip_chat = no\n[svm]\nc = 0.5\n"))
        assert cfg.ngram.order == 3
        assert cfg.ngram.strip_chat is False
        assert cfg.svm.c == 0.5
        assert (cfg.ubm.seed, cfg.ivector.seed, cfg.xvector.seed, cfg.cv.seed) == (1, 2, 3, 4)

    def test_seeds_mandatory(self, tmp_path):
        with pytest.raises(ConfigurationError, match="xvector.seed"):
            load_config(write(tmp_path, "[ubm]\nseed = 1\n[ivector]\nseed = 2\n[cv]\nseed = 4\n"))

    def test_precedence(self, tmp_path):
        path = write(tmp_path, SEEDS.replace("seed = 1", "seed = 1\ncomponents = 8") + "[ngram]\norder = 2\n")
        env = {"SPEECHMARK_UBM__COMPONENTS": "16", "SPEECHMARK_NGRAM__ORDER": "4", "OTHER": "x"}
        cfg = load_config(path, [("ubm.components", "32")], environ=env)
        assert cfg.ubm.components == 32
        assert cfg.ngram.order == 4

    def test_unknown_section_and_key(self):
        with pytest.raises(ConfigurationError, match="section"):
            build_config({("bogus", "x"): "1"}, require_seeds=False)
        with pytest.raises(ConfigurationError, match="ubm.size"):
            build_config({("ubm", "size"): "1"}, require_seeds=False)

    def test_bad_value(self):
        with pytest.raises(ConfigurationError, match="ubm.components"):
            build_config({("ubm", "components"): "many"}, require_seeds=False)

    def test_tuples_and_optional(self):
        cfg = build_config({("ablation", "ubm_grid"): "8, 4", ("xvector", "noise_snr_db"): "none",
                            ("frontend", "high_freq"): "7600"}, require_seeds=False)
        assert cfg.ablation.ubm_grid == (8, 4)
        assert cfg.xvector.noise_snr_db is None
        assert cfg.frontend.high_freq == 7600.0

    def test_relative_manifest(self, tmp_path):
        cfg = load_config(write(tmp_path, SEEDS + "[paths]\nmanifest = data/m.csv\n"))
        assert cfg.paths.manifest == str(tmp_path / "data" / "m.csv")

    def test_env_parsing(self):
        assert env_overrides({"SPEECHMARK_CV__K_FOLDS": "5", "SPEECHMARK_X": "1"}) == {("cv", "k_folds"): "5"}

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.cfg")


class TestFingerprint:
    def test_paths_excluded(self):
        a = RunConfig()
        b = a.replace(paths={"work_dir": "elsewhere"})
        assert a.fingerprint() == b.fingerprint()

    def test_sections(self):
        a = RunConfig()
        b = a.replace(ubm={"components": 7})
        assert a.fingerprint() != b.fingerprint()
        assert a.fingerprint("ngram") == b.fingerprint("ngram")
        assert a.fingerprint("ubm") != b.fingerprint("ubm")

    def test_dump_roundtrip(self, tmp_path):
        cfg = RunConfig().replace(ubm={"components": 12}, xvector={"noise_snr_db": 15.0},
                                  ablation={"smoothers": ("kneser_ney",)})
        path = write(tmp_path, dump_config(cfg))
        again = build_config(read_config_file(path))
        assert again == cfg
        assert again.fingerprint() == cfg.fingerprint()
