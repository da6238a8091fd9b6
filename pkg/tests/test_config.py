import pytest

from rvrec.config import ConfigError, ExperimentConfig, load_config, parse_config_text, parse_overrides


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.d, cfg.epochs, cfg.batch_size, cfg.eval_negatives, cfg.train_negatives) == (100, 100, 512, 99, 20)
    assert cfg.lambda1 == cfg.lambda2 == 1.0
    assert cfg.learning_rate == 1e-3 and cfg.enhance == "replace" and cfg.msvr_mode == "ui"


@pytest.mark.parametrize("kw", [dict(lambda1=-1), dict(lambda2=-0.1), dict(d=0), dict(msvr_mode="x"), dict(enhance="add"),
                                dict(backbone="ncf"), dict(split="random"), dict(coalition_cap=1), dict(max_users=-1),
                                dict(ms_objective="both"), dict(format="json")])
def test_invalid(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# experiment\nd = 16\npeo = off   # ablation\nlambda2 = 0.01\nmsvr_mode = u\n")
    cfg = load_config(path, {"lambda2": "0.1", "peo-bias": "off"})
    assert (cfg.d, cfg.peo, cfg.peo_bias, cfg.lambda2, cfg.msvr_mode) == (16, False, False, 0.1, "u")


def test_text_round_trip():
    cfg = ExperimentConfig(d=7, peo=False, lambda1=0.25, ratings="x.dat")
    assert load_config(None, parse_config_text(cfg.to_text())) == cfg


def test_bad_lines():
    with pytest.raises(ConfigError):
        parse_config_text("d 16\n")
    with pytest.raises(ConfigError):
        parse_overrides({"nope": "1"})
    with pytest.raises(ConfigError):
        parse_overrides({"d": "sixteen"})
    with pytest.raises(ConfigError):
        parse_overrides({"peo": "maybe"})


def test_every_toggle_reachable():
    names = set(ExperimentConfig().to_dict())
    for toggle in ("backbone", "peo", "peo_bias", "msvr_mode", "enhance", "coalition_cap", "ms_objective",
                   "lambda1", "lambda2", "split", "threshold", "k_core", "seed", "max_users"):
        assert toggle in names
