import pytest

from tailrisk.config import ALL_MODELS, DEFAULTS, ConfigError, config_hash, load_config, output_dir


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_fill_in(tmp_path):
    cfg = load_config(write(tmp_path, '[data]\nsynthetic = {n = 500}\n'))
    assert cfg["models"]["roster"] == list(ALL_MODELS)
    assert cfg["econ"]["fit_window"] == DEFAULTS["econ"]["fit_window"]
    assert cfg["targets"] == [{"alpha": 0.05, "window": 24}]


def test_relative_data_path(tmp_path):
    (tmp_path / "sub").mkdir()
    cfg = load_config(write(tmp_path / "sub", '[data]\npath = "prices.csv"\n'))
    assert cfg["data"]["path"] == str((tmp_path / "sub" / "prices.csv").resolve())


@pytest.mark.parametrize("text, match", [
    ('[data]\nsynthetic = {}\n[econ]\nfit_windw = 5\n', "unknown config key"),
    ('[data]\nsynthetic = {}\n[models]\nroster = ["garch", "mlp"]\n', "unknown model"),
    ('[data]\nsynthetic = {}\n[models]\nroster = []\n', "empty"),
    ('[data]\n', "exactly one"),
    ('[data]\npath = "a.csv"\nsynthetic = {}\n', "exactly one"),
    ('[data]\nsynthetic = {}\n[[targets]]\nalpha = 1.5\nwindow = 24\n', "bad target"),
    ('[data]\nsynthetic = {}\n[split]\ntrain_fraction = 1.0\n', "train_fraction"),
    ('[data]\nsynthetic = {}\n[econ]\norders = [1, 1]\n', "orders"),
    ('[data]\nsynthetic = {}\n[strategy]\nfee_rate = -0.1\n', "fee_rate"),
    ('[data\n', "run.toml"),
])
def test_rejects(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, '[data]\nsynthetic = {n = 500}\n[run]\nseed = 3\n'),
                      {"run": {"strict": False}})
    assert cfg["run"]["seed"] == 3 and cfg["run"]["strict"] is False


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = load_config(write(tmp_path, '[data]\nsynthetic = {}\n'))
    monkeypatch.delenv("TAILRISK_OUTPUT_DIR", raising=False)
    with pytest.raises(ConfigError):
        output_dir(cfg)
    monkeypatch.setenv("TAILRISK_OUTPUT_DIR", str(tmp_path / "env"))
    assert output_dir(cfg) == tmp_path / "env"
    cfg["run"]["output_dir"] = str(tmp_path / "cfg")
    assert output_dir(cfg) == tmp_path / "cfg"
    assert output_dir(cfg, tmp_path / "cli") == tmp_path / "cli"


def test_hash_ignores_location(tmp_path):
    a = load_config(write(tmp_path, '[data]\npath = "x.csv"\n'))
    (tmp_path / "b").mkdir()
    b = load_config(write(tmp_path / "b", '[data]\npath = "x.csv"\n[run]\noutput_dir = "o"\n'))
    assert config_hash(a) == config_hash(b)
    c = load_config(write(tmp_path, '[data]\npath = "x.csv"\n[run]\nseed = 1\n', "c.toml"))
    assert config_hash(a) != config_hash(c)
