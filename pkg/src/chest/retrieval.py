"""Recall@k and MAP@R in Euclidean and hyperbolic embedding spaces.

Protocol: every item queries all other items (self excluded).  Neighbours are
ranked by distance with ties going to the lower index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ChestError
from .geometry import DTYPE, BallConfig, check_in_ball, pairwise_distance
from .model import ModelSpec, encode, head_from_params, map_to_hyperbolic

_CHUNK = 512


class UndefinedMetricError(ChestError, ValueError):
    pass


@dataclass
class RetrievalIndex:
    embeddings: torch.Tensor
    labels: np.ndarray
    space: str

    def __post_init__(self):
        self.embeddings = torch.as_tensor(self.embeddings, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.space not in ("E", "H"):
            raise ValueError(f"space must be 'E' or 'H', got {self.space!r}")
        if len(self.labels) < 2 or len(self.labels) != len(self.embeddings):
            raise ValueError("an index needs N >= 2 embeddings with one label each")

    def __len__(self):
        return len(self.labels)


@dataclass
class MetricsReport:
    recall_at: dict = field(default_factory=dict)
    map_at_r: float = float("nan")
    space: str = "E"

    def as_dict(self):
        return {"recall_at": {str(k): v for k, v in self.recall_at.items()},
                "map_at_r": self.map_at_r, "space": self.space}


def distance_matrix(index: RetrievalIndex, cfg: BallConfig | None = None) -> torch.Tensor:
    x = index.embeddings
    if index.space == "H":
        check_in_ball(x, cfg, "hyperbolic embedding")
    with torch.no_grad():
        rows = [pairwise_distance(x[i:i + _CHUNK], x, index.space, cfg) for i in range(0, len(x), _CHUNK)]
    return torch.cat(rows)


def ranking(index: RetrievalIndex, cfg: BallConfig | None = None, depth: int | None = None) -> np.ndarray:
    """``(N, depth)`` neighbour indices per query, nearest first, self excluded."""
    d = distance_matrix(index, cfg).numpy().copy()
    n = len(d)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    # self sorts last: no other distance is infinite
    depth = n - 1 if depth is None else depth
    return order[:, :depth]


def recall_at_k(index: RetrievalIndex, ks, cfg: BallConfig | None = None) -> dict:
    n = len(index)
    ks = [int(k) for k in ks]
    for k in ks:
        if not 1 <= k < n:
            raise ValueError(f"k={k} is out of range for N={n} (need 1 <= k < N)")
    order = ranking(index, cfg, depth=max(ks))
    hit = index.labels[order] == index.labels[:, None]
    first_hit = np.where(hit.any(axis=1), hit.argmax(axis=1), np.inf)
    return {k: float((first_hit < k).mean()) for k in ks}


def average_precision_at_r(index: RetrievalIndex, cfg: BallConfig | None = None) -> np.ndarray:
    """Per-query average precision over the top ``R`` ranks (``nan`` where ``R = 0``).

    ``R`` is the number of other items sharing the query's class.
    """
    labels = index.labels
    R = np.bincount(labels)[labels] - 1
    out = np.full(len(labels), np.nan)
    if not (R > 0).any():
        return out
    order = ranking(index, cfg, depth=int(R.max()))
    rel = (labels[order] == labels[:, None]).astype(np.float64)
    ranks = np.arange(1, rel.shape[1] + 1)
    rel *= ranks[None, :] <= R[:, None]
    precision = np.cumsum(rel, axis=1) / ranks
    # fsum: correctly rounded, so the result does not depend on summation order
    terms = precision * rel
    for q in np.flatnonzero(R > 0):
        out[q] = math.fsum(terms[q]) / R[q]
    return out


def map_at_r(index: RetrievalIndex, cfg: BallConfig | None = None) -> float:
    """Mean of :func:`average_precision_at_r` over queries with at least one positive."""
    ap = average_precision_at_r(index, cfg)
    ap = ap[~np.isnan(ap)]
    if len(ap) == 0:
        raise UndefinedMetricError("MAP@R undefined: no query has another item of its class")
    return math.fsum(ap) / len(ap)


def evaluate_index(index: RetrievalIndex, ks, cfg: BallConfig | None = None) -> MetricsReport:
    return MetricsReport(recall_at_k(index, ks, cfg), map_at_r(index, cfg), index.space)


def embed(params, spec: ModelSpec, features, cfg: BallConfig):
    with torch.no_grad():
        x_E = encode(params, spec.encoder, torch.as_tensor(features, dtype=DTYPE))
        x_H = map_to_hyperbolic(head_from_params(params, cfg), x_E)
    return x_E, x_H


def evaluate_both(params, spec: ModelSpec, dataset, ks, cfg: BallConfig):
    """Metrics on backbone outputs (E) and on mapped outputs (H)."""
    x_E, x_H = embed(params, spec, dataset.features, cfg)
    rep_E = evaluate_index(RetrievalIndex(x_E, dataset.labels, "E"), ks, cfg)
    rep_H = evaluate_index(RetrievalIndex(x_H, dataset.labels, "H"), ks, cfg)
    return rep_E, rep_H
