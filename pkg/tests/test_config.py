import pytest
import yaml

from chest import config
from chest.config import (BEST_MARGINS, DATASET_PRESETS, DEFAULTS, MARGIN_GRID, ExperimentConfig, apply_overrides,
                          from_dict, load_config, preset)
from chest.errors import ConfigError
from chest.geometry import CLIP_RADIUS, CURVATURE, BallConfig
from chest.losses import ETA, GAMMA, GAMMA_HYP, LAMBDA, TAU, LossParams


def test_shared_defaults():
    assert (GAMMA, LAMBDA, ETA, GAMMA_HYP, TAU, CURVATURE, CLIP_RADIUS) == (5.0, 20.0, 1.0, 1.0, 0.5, 0.5, 2.3)
    assert DEFAULTS == dict(gamma_E=5.0, gamma_H=5.0, lambda_E=20.0, lambda_H=20.0, eta_E=1.0, eta_H=1.0,
                                  gamma_hyp=1.0, tau=0.5, curvature=0.5, clip_radius=2.3)
    cfg = from_dict({})
    for name in ("gamma_E", "gamma_H", "lambda_E", "lambda_H", "eta_E", "eta_H", "gamma_hyp", "tau"):
        assert getattr(cfg.loss, name) == DEFAULTS[name]
    assert cfg.ball.curvature == 0.5 and cfg.ball.clip_radius == 2.3


def test_dataset_presets():
    assert DATASET_PRESETS["cub200"] == dict(batch_size=200, steps=120, lr_backbone=3e-5, lr_proxy=1e-2, per_class=10,
                                    triplets_per_step=100)
    assert DATASET_PRESETS["cars196"] == dict(batch_size=198, steps=1800, lr_backbone=1e-5, lr_proxy=1e-2, per_class=10,
                                     triplets_per_step=98)
    assert DATASET_PRESETS["inshop"] == dict(batch_size=100, steps=30000, lr_backbone=1e-5, lr_proxy=1e-1, per_class=2,
                                    triplets_per_step=3997)
    assert DATASET_PRESETS["sop"] == dict(batch_size=75, steps=50000, lr_backbone=1e-5, lr_proxy=1e-1, per_class=2,
                                 triplets_per_step=11318)
    assert MARGIN_GRID == (1.0, 5.0, 10.0, 20.0)
    assert BEST_MARGINS == {"cub200": (20.0, 1.0), "cars196": (1.0, 5.0), "inshop": (10.0, 5.0), "sop": (1.0, 5.0)}


def test_preset_builds_a_config():
    raw = preset("cars196")
    assert raw["train"]["triplets_per_step"] == 98 and raw["per_class"] == 10
    raw = apply_overrides(raw, ["data.synthetic.train_per_class=50", "eval.ks=[1]"])
    cfg = from_dict(raw)
    assert cfg.train.steps == 1800 and cfg.loss.delta_H == 1.0 and cfg.loss.delta_E == 5.0
    with pytest.raises(KeyError):
        preset("imagenet")


def test_overrides():
    raw = apply_overrides({}, ["loss.delta_H=20", "train.sampler=balanced", "eval.ks=[1, 3]", "hyp_dim=8"])
    cfg = from_dict(raw)
    assert cfg.loss.delta_H == 20 and cfg.train.sampler == "balanced" and cfg.eval.ks == [1, 3] and cfg.hyp_dim == 8
    with pytest.raises(ConfigError):
        apply_overrides({}, ["loss.delta_H"])


def test_every_violation_is_listed():
    with pytest.raises(ConfigError) as info:
        from_dict({"loss": {"tau": 0.5, "gamma_E": -1}, "per_class": 1, "train": {"batch_size": 0},
                   "encoder": {"input_dim": 10}, "bogus": 1})
    text = "\n".join(info.value.violations)
    for fragment in ("gamma_E", "K >= 2", "batch_size", "input_dim", "bogus"):
        assert fragment in text
    assert len(info.value.violations) >= 4


def test_tau_needs_two_proxies_and_triplets():
    with pytest.raises(ConfigError, match="K >= 2"):
        from_dict({"per_class": 1})
    with pytest.raises(ConfigError, match="M >= 1"):
        from_dict({"train": {"triplets_per_step": 0}})
    from_dict({"per_class": 1, "loss": {"tau": 0.0}, "train": {"triplets_per_step": 0}})


def test_eta_rule():
    with pytest.raises(ConfigError, match="eta_E"):
        from_dict({"loss": {"eta_E": 0.0, "eta_H": 0.0, "tau": 0.0}})


def test_data_source_rules():
    with pytest.raises(ConfigError, match="not both"):
        from_dict({"data": {"train_path": "a.csv", "test_path": "b.csv", "synthetic": {}}})
    with pytest.raises(ConfigError, match="test_path"):
        from_dict({"data": {"train_path": "a.csv"}})
    cfg = from_dict({"data": {"train_path": "a.csv", "test_path": "b.csv"}})
    assert cfg.data.synthetic is None
    with pytest.raises(ConfigError, match="smaller than the test set"):
        from_dict({"eval": {"ks": [400]}})


def test_snapshot_round_trip(tmp_path):
    cfg = from_dict({"loss": {"delta_H": 10.0}, "train": {"seed": 7}})
    path = tmp_path / "config.yaml"
    cfg.dump(path)
    assert load_config(path) == cfg
    assert yaml.safe_load(path.read_text())["loss"]["delta_H"] == 10.0


def test_bad_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("loss: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_types():
    cfg = ExperimentConfig()
    assert isinstance(cfg.ball, BallConfig) and isinstance(cfg.loss, LossParams)
    assert config.from_dict(cfg.to_dict()) == cfg
