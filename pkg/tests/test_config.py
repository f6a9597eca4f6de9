import json

import numpy as np
import pytest

from magsing.config import (ConfigError, ExperimentConfig, build_system, load_config, preset,
                            validate)

PRESETS = ["pendulum", "magnetic-1d", "magnetic-2d", "torus-distance"]


@pytest.mark.parametrize("name", PRESETS)
def test_preset_roundtrip_yaml_and_json(name, tmp_path):
    cfg = preset(name, 32)
    (tmp_path / "c.yaml").write_text(cfg.to_yaml())
    (tmp_path / "c.json").write_text(cfg.to_json())
    for f in ("c.yaml", "c.json"):
        back = load_config(tmp_path / f)
        assert back == cfg and back.hash() == cfg.hash()


def test_hash_changes_with_content():
    a, b = preset("pendulum", 64), preset("pendulum", 128)
    assert a.hash() != b.hash()
    assert len(a.hash()) == 64


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("system:\n  name: pendulum\n  colour: blue\n")
    with pytest.raises(ConfigError, match="unknown key 'colour' in config.system"):
        load_config(p)


@pytest.mark.parametrize("patch, msg", [
    ({"system": {"dim": 3}}, "dim"),
    ({"system": {"n": 4}}, "system.n"),
    ({"system": {"omega": [0.0, 1.0]}}, "omega"),
    ({"solver": {"mode": "newton"}}, "solver.mode"),
    ({"flow": {"T": -1.0}}, "flow.T"),
    ({"flow": {"mode": "g3"}}, "flow.mode"),
    ({"mollify": {"ladder": [16, 0]}}, "ladder"),
    ({"system": {"potential": {"id": "quartic"}}}, "potential"),
])
def test_validation_errors(patch, msg):
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig.from_dict(patch)


def test_malformed_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "y.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="expected a mapping"):
        load_config(p)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("duffing")


def test_build_system_potentials():
    pend = build_system(preset("pendulum", 64).system)
    assert pend.V.max() == 0.0 and pend.V.min() == pytest.approx(-2.0)
    mag = build_system(preset("magnetic-2d", 32).system)
    assert mag.V.min() == pytest.approx(-2.0)
    assert np.allclose(mag.omega.components[..., 0], 0.3)


def test_conformal_metric_option():
    cfg = preset("torus-distance", 32)
    cfg.system.metric.kind = "conformal"
    cfg.system.metric.amplitude = 0.5
    validate(cfg)
    sys = build_system(cfg.system)
    g = sys.metric.g
    assert np.allclose(g[..., 0, 1], 0.0) and np.allclose(g[..., 0, 0], g[..., 1, 1])
    assert g[..., 0, 0].max() > 1.0 > g[..., 0, 0].min()


def test_to_dict_is_json_serializable():
    json.dumps(preset("magnetic-2d").to_dict())
