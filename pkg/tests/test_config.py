import pytest

from docre.config import ConfigError, load_config


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.calibration.bins == 10 and cfg.train.batch_size == 4 and cfg.head.lam == 10.0
        assert cfg.run.seeds == [0]

    def test_file_then_overrides(self, tmp_path):
        (tmp_path / "c.toml").write_text('[train]\nepochs = 3\nlr = 0.01\n[head]\nprism = false\n')
        cfg = load_config(tmp_path / "c.toml", {("train", "epochs"): "7", ("run", "seeds"): "0,1,2"})
        assert cfg.train.epochs == 7 and cfg.train.lr == 0.01 and cfg.head.prism is False
        assert cfg.run.seeds == [0, 1, 2]

    def test_switch_values(self):
        assert load_config(overrides={("head", "prism"): "off"}).head.prism is False
        assert load_config(overrides={("head", "prism"): "on"}).head.prism is True

    def test_dump_reloads(self, tmp_path):
        cfg = load_config(overrides={("encoder", "dim"): 24, ("calibration", "method"): "cda-ts"})
        (tmp_path / "echo.toml").write_text(cfg.dumps())
        assert load_config(tmp_path / "echo.toml") == cfg

    @pytest.mark.parametrize("text, match", [
        ("[nope]\nx = 1\n", "nope"),
        ("[train]\nmomentum = 1\n", "momentum"),
        ("[train]\nepochs = 'many'\n", "epochs"),
        ("[calibration]\nmethod = 'platt'\n", "calibration"),
        ("[synthetic]\nna_ratio = 1.5\n", "synthetic"),
        ("[train\n", "Expected"),
    ])
    def test_errors(self, tmp_path, text, match):
        (tmp_path / "c.toml").write_text(text)
        with pytest.raises(ConfigError, match=match):
            load_config(tmp_path / "c.toml")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")
