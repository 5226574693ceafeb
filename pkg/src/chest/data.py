"""Vector datasets: delimited-text IO and a seeded hierarchical generator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError

log = logging.getLogger(__name__)


@dataclass
class VectorDataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    # original label -> contiguous label, when the file used other ids
    label_map: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an (N, input_dim) array")
        if len(self.labels) != len(self.features):
            raise ValueError("features and labels differ in length")
        if len(self.labels) == 0:
            raise ValueError("dataset is empty")
        present = np.unique(self.labels)
        if present[0] != 0 or present[-1] != len(present) - 1:
            raise ValueError("labels must be contiguous in [0, C) with every class present")

    def __len__(self):
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class HierarchySpec:
    super_classes: int = 2
    sub_per_super: int = 4
    train_per_class: int = 100
    test_per_class: int = 50
    input_dim: int = 64
    super_scale: float = 4.0
    sub_scale: float = 1.0
    noise_scale: float = 2.5
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return self.super_classes * self.sub_per_super

    def violations(self):
        out = []
        for name in ("super_classes", "sub_per_super", "train_per_class", "test_per_class", "input_dim"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                out.append(f"data.synthetic.{name} must be a positive integer (got {v!r})")
        for name in ("super_scale", "sub_scale", "noise_scale"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                out.append(f"data.synthetic.{name} must be > 0 (got {v!r})")
        if not out and self.num_classes < 2:
            out.append("data.synthetic needs super_classes * sub_per_super >= 2")
        return out


def generate_hierarchy(spec: HierarchySpec):
    """Two-level Gaussian mixture: super means, sub-class means around them, samples around those.

    Class ``s * sub_per_super + j`` is sub-class ``j`` of super-class ``s``.
    Returns ``(train, test)``.
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.input_dim
    supers = rng.normal(0.0, spec.super_scale, size=(spec.super_classes, d))
    means = supers[:, None, :] + rng.normal(0.0, spec.sub_scale, size=(spec.super_classes, spec.sub_per_super, d))
    means = means.reshape(-1, d)
    C = len(means)

    def draw(n, split):
        x = means[:, None, :] + rng.normal(0.0, spec.noise_scale, size=(C, n, d))
        y = np.repeat(np.arange(C), n)
        return VectorDataset(x.reshape(-1, d), y, split)

    train = draw(spec.train_per_class, "train")
    test = draw(spec.test_per_class, "test")
    return train, test


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_dataset(path, split="train", delimiter=",") -> VectorDataset:
    """Read ``label,<features...>`` rows.

    ``#`` lines are skipped; a first row made only of non-numeric fields is
    taken as a header.  Labels are remapped to ``0..C-1`` in sorted order.
    """
    rows, labels = [], []
    width = None
    header_allowed = True
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(delimiter)]
            if header_allowed and not any(_is_number(f) for f in fields):
                header_allowed = False
                continue
            header_allowed = False
            if len(fields) < 2:
                raise ParseError("row needs a label and at least one feature", line=lineno)
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(f"expected {width - 1} features, found {len(fields) - 1}", line=lineno)
            try:
                label = int(fields[0])
            except ValueError:
                raise ParseError(f"label {fields[0]!r} is not an integer", line=lineno) from None
            try:
                feats = [float(f) for f in fields[1:]]
            except ValueError as e:
                raise ParseError(f"non-numeric feature ({e})", line=lineno) from None
            if not all(math.isfinite(v) for v in feats):
                raise ParseError("non-finite feature value", line=lineno)
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError(f"{path}: no data rows", line=None)
    original = sorted(set(labels))
    mapping = {lab: i for i, lab in enumerate(original)}
    if any(k != v for k, v in mapping.items()):
        log.info("remapped labels in %s: %s", path, mapping)
    else:
        mapping = {}
    y = np.array([mapping.get(lab, lab) for lab in labels], dtype=np.int64)
    return VectorDataset(np.array(rows, dtype=np.float64), y, split, mapping)


def save_dataset(ds: VectorDataset, path, delimiter=","):
    """Write with 17 significant digits so doubles survive the round trip."""
    with open(path, "w") as fh:
        fh.write("# label" + "".join(f"{delimiter}f{i}" for i in range(ds.input_dim)) + "\n")
        for y, row in zip(ds.labels, ds.features):
            fh.write(str(int(y)) + delimiter + delimiter.join(f"{v:.17g}" for v in row) + "\n")


def nearest_centroid_accuracy(train: VectorDataset, test: VectorDataset) -> float:
    cents = np.stack([train.features[train.labels == c].mean(axis=0) for c in range(train.num_classes)])
    d = ((test.features[:, None, :] - cents[None]) ** 2).sum(-1)
    return float((d.argmin(axis=1) == test.labels).mean())
