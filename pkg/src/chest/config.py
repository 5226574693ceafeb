"""Experiment configuration: defaults, dataset presets, YAML loading and validation."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

import yaml

from .data import HierarchySpec
from .errors import ConfigError
from .geometry import CLIP_RADIUS, CURVATURE, BallConfig
from .losses import ETA, GAMMA, GAMMA_HYP, LAMBDA, TAU, LossParams
from .model import EncoderSpec
from .train import TrainConfig

# Per-dataset training parameters used with the ViT backbone.
DATASET_PRESETS = {
    "cub200": dict(batch_size=200, steps=120, lr_backbone=3e-5, lr_proxy=1e-2, per_class=10, triplets_per_step=100),
    "cars196": dict(batch_size=198, steps=1800, lr_backbone=1e-5, lr_proxy=1e-2, per_class=10, triplets_per_step=98),
    "inshop": dict(batch_size=100, steps=30000, lr_backbone=1e-5, lr_proxy=1e-1, per_class=2, triplets_per_step=3997),
    "sop": dict(batch_size=75, steps=50000, lr_backbone=1e-5, lr_proxy=1e-1, per_class=2, triplets_per_step=11318),
}

# Margin grid searched per dataset, and the (delta_H, delta_E) pair selected for each.
MARGIN_GRID = (1.0, 5.0, 10.0, 20.0)
BEST_MARGINS = {"cub200": (20.0, 1.0), "cars196": (1.0, 5.0), "inshop": (10.0, 5.0), "sop": (1.0, 5.0)}

# Hyperparameters shared by every dataset.
DEFAULTS = dict(gamma_E=GAMMA, gamma_H=GAMMA, lambda_E=LAMBDA, lambda_H=LAMBDA, eta_E=ETA, eta_H=ETA,
           gamma_hyp=GAMMA_HYP, tau=TAU, curvature=CURVATURE, clip_radius=CLIP_RADIUS)


@dataclass
class DataConfig:
    train_path: str | None = None
    test_path: str | None = None
    synthetic: HierarchySpec | None = field(default_factory=HierarchySpec)


@dataclass
class EvalConfig:
    ks: list = field(default_factory=lambda: [1, 2, 4])
    # evaluate every n steps during training (0: only at the end)
    every: int = 0


@dataclass
class AblateConfig:
    seeds: list = field(default_factory=lambda: [0])
    jobs: int = 1


@dataclass
class ExperimentConfig:
    ball: BallConfig = field(default_factory=BallConfig)
    loss: LossParams = field(default_factory=LossParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    hyp_dim: int = 16
    per_class: int = 2
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["betas"] = list(d["train"]["betas"])
        return d

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


_SECTIONS = {"ball": BallConfig, "loss": LossParams, "train": TrainConfig, "encoder": EncoderSpec,
             "eval": EvalConfig, "ablate": AblateConfig}
_SCALARS = {"hyp_dim", "per_class", "output_dir"}


def preset(name: str) -> dict:
    """Raw config dict for a Table-1 dataset preset (backbone/data left to the user)."""
    if name not in DATASET_PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(DATASET_PRESETS)}")
    t = dict(DATASET_PRESETS[name])
    per_class = t.pop("per_class")
    delta_H, delta_E = BEST_MARGINS[name]
    return {"train": t, "per_class": per_class, "loss": {"delta_H": delta_H, "delta_E": delta_E}}


def _build(cls, raw, prefix, errors):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"{prefix} must be a mapping")
        return None
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        errors.append(f"{prefix}: unknown keys {unknown}")
        raw = {k: v for k, v in raw.items() if k in known}
    if cls is TrainConfig and "betas" in raw:
        raw = {**raw, "betas": tuple(raw["betas"])}
    try:
        obj = cls(**raw)
    except ValueError as e:
        errors.extend(str(e).split("; "))
        return None
    except TypeError as e:
        errors.append(f"{prefix}: {e}")
        return None
    if hasattr(obj, "violations"):
        problems = obj.violations()
        errors.extend(problems)
        if problems:
            return None
    return obj


def _raw_value(raw, section, key, default):
    sec = raw.get(section)
    return sec.get(key, default) if isinstance(sec, dict) else default


def from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate; raises :class:`ConfigError` listing every violated rule."""
    raw = copy.deepcopy(raw or {})
    errors = []
    unknown = sorted(set(raw) - set(_SECTIONS) - _SCALARS - {"data"})
    if unknown:
        errors.append(f"unknown top-level keys {unknown}")
    parts = {name: _build(cls, raw.get(name), name, errors) for name, cls in _SECTIONS.items()}

    data_raw = raw.get("data") or {}
    synth_raw = data_raw.get("synthetic", {} if not data_raw.get("train_path") else None)
    synth = _build(HierarchySpec, synth_raw, "data.synthetic", errors) if synth_raw is not None else None
    extra = sorted(set(data_raw) - {"train_path", "test_path", "synthetic"})
    if extra:
        errors.append(f"data: unknown keys {extra}")
    data = DataConfig(data_raw.get("train_path"), data_raw.get("test_path"), synth)
    if data.train_path and synth_raw is not None:
        errors.append("data: give either train_path or synthetic, not both")
    if not data.train_path and synth_raw is None:
        errors.append("data: no source given (set data.train_path/test_path or data.synthetic)")
    if data.test_path and not data.train_path:
        errors.append("data.train_path is required with data.test_path")
    if data.train_path and not data.test_path:
        errors.append("data.test_path is required with data.train_path")

    hyp_dim = raw.get("hyp_dim", 16)
    per_class = raw.get("per_class", 2)
    if not (isinstance(hyp_dim, int) and hyp_dim > 0):
        errors.append(f"hyp_dim must be a positive integer (got {hyp_dim!r})")
    if not (isinstance(per_class, int) and per_class >= 1):
        errors.append(f"per_class (K) must be an integer >= 1 (got {per_class!r})")

    loss, train, enc, ev = parts["loss"], parts["train"], parts["encoder"], parts["eval"]
    tau = loss.tau if loss is not None else _raw_value(raw, "loss", "tau", TAU)
    if isinstance(tau, (int, float)) and tau > 0:
        if isinstance(per_class, int) and per_class < 2:
            errors.append(f"loss.tau > 0 requires per_class K >= 2 (got K={per_class})")
        if train is not None and train.triplets_per_step < 1:
            errors.append("loss.tau > 0 requires train.triplets_per_step M >= 1")
    if synth is not None and enc is not None and enc.input_dim != synth.input_dim:
        errors.append(f"encoder.input_dim ({enc.input_dim}) != data.synthetic.input_dim ({synth.input_dim})")
    if synth is not None and train is not None and train.batch_size > synth.num_classes * synth.train_per_class:
        errors.append("train.batch_size exceeds the synthetic training set size")
    if ev is not None:
        if not ev.ks or not all(isinstance(k, int) and k >= 1 for k in ev.ks):
            errors.append(f"eval.ks must be a non-empty list of positive integers (got {ev.ks!r})")
        if synth is not None and ev.ks and max(ev.ks) >= synth.num_classes * synth.test_per_class:
            errors.append("eval.ks must be smaller than the test set size")
    ab = parts["ablate"]
    if ab is not None and (not ab.seeds or not isinstance(ab.jobs, int) or ab.jobs < 1):
        errors.append("ablate.seeds must be non-empty and ablate.jobs >= 1")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(ball=parts["ball"], loss=loss, train=train, encoder=enc, hyp_dim=hyp_dim,
                            per_class=per_class, data=data, eval=ev, ablate=ab,
                            output_dir=str(raw.get("output_dir", "runs/default")))


def parse_override(item: str):
    """``"loss.delta_H=20"`` -> ``(["loss", "delta_H"], 20)``; values are parsed as YAML scalars."""
    if "=" not in item:
        raise ConfigError([f"override {item!r} is not of the form key=value"])
    key, value = item.split("=", 1)
    try:
        return key.strip().split("."), yaml.safe_load(value)
    except yaml.YAMLError as e:
        raise ConfigError([f"override {item!r}: {e}"]) from None


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw or {})
    for item in overrides or []:
        path, value = parse_override(item) if isinstance(item, str) else item
        node = raw
        for part in path[:-1]:
            if node.get(part) is None:
                node[part] = {}
            node = node[part]
            if not isinstance(node, dict):
                raise ConfigError([f"override {'.'.join(path)}: {part} is not a section"])
        node[path[-1]] = value
    return raw


def load_raw(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError([f"{path}: {e}"]) from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return raw


def load_config(path=None, overrides=None) -> ExperimentConfig:
    return from_dict(apply_overrides(load_raw(path), overrides))
