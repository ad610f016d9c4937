import pytest
import yaml

from driftrec.config import ConfigError, ModelConfig, load_config, save_config


def write_cfg(tmp_path, d):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(d))
    return str(p)


def test_file_value_passthrough(tmp_path):
    path = write_cfg(tmp_path, {"lambda_stb": 0.8})
    cfg = load_config(path)
    assert cfg.lambda_stb == 0.8


def test_invalid_future_window_names_key(tmp_path):
    path = write_cfg(tmp_path, {"W": 4})
    with pytest.raises(ConfigError, match=r"W must be in \{1,3,5\}"):
        load_config(path)


def test_override_precedence(tmp_path):
    path = write_cfg(tmp_path, {"lambda_stb": 0.8})
    cfg = load_config(path, {"lambda_stb": "1.2"})
    assert cfg.lambda_stb == 1.2


def test_none_override_ignored(tmp_path):
    path = write_cfg(tmp_path, {"lambda_stb": 0.8})
    cfg = load_config(path, {"lambda_stb": None})
    assert cfg.lambda_stb == 0.8


def test_unknown_key_rejected(tmp_path):
    path = write_cfg(tmp_path, {"nonsense": 1})
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(path)


def test_parse_failure(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("{unbalanced")
    with pytest.raises(ConfigError, match="failed to parse"):
        load_config(str(p))


def test_round_trip(tmp_path):
    cfg = ModelConfig(d=8, encoder_heads=2, lambda_stb=1.7, W=5, seed=3)
    out = tmp_path / "out.yaml"
    save_config(cfg, str(out))
    assert load_config(str(out)) == cfg


@pytest.mark.parametrize("key,value", [
    ("lambda_stb", 0.4),
    ("lambda_stb", 2.5),
    ("T", 0.0),
    ("tau_S", 0),
    ("cond_dropout_p", 1.5),
    ("dts_max_removal_frac", 1.0),
    ("dts_min_history", 1),
    ("guidance_strength", -0.1),
    ("score_fn", "euclid"),
])
def test_range_violations(key, value):
    with pytest.raises(ConfigError, match=key.split("_")[0]):
        ModelConfig(**{key: value})


def test_heads_must_divide_d():
    with pytest.raises(ConfigError):
        ModelConfig(d=10, encoder_heads=4)
