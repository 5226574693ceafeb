"""CHEST loss components.

* softmin similarity between a sample and the K proxies of one class,
* the two-space SoftTriple-style similarity loss,
* exp(-distance) proxy similarity and the triplet hierarchical-clustering
  regulariser over hyperbolic proxies,
* the weighted total.

Everything is written with torch ops so gradients come from autograd.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch

from .errors import DegenerateProblemError, EmptyProxyError, NonFiniteError
from .geometry import DTYPE, BallConfig, as_tensor, pairwise_distance, poincare_distance

GAMMA = 5.0
LAMBDA = 20.0
ETA = 1.0
GAMMA_HYP = 1.0
TAU = 0.5

# rows per block in class_similarities; bounds the (rows, C*K, D) intermediates
_ROW_CHUNK = 256


@dataclass(frozen=True)
class LossParams:
    gamma_E: float = GAMMA
    gamma_H: float = GAMMA
    lambda_E: float = LAMBDA
    lambda_H: float = LAMBDA
    delta_E: float = 5.0
    delta_H: float = 1.0
    eta_E: float = ETA
    eta_H: float = ETA
    gamma_hyp: float = GAMMA_HYP
    tau: float = TAU

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self):
        out = []
        for name in ("gamma_E", "gamma_H", "lambda_E", "lambda_H", "gamma_hyp"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                out.append(f"loss.{name} must be > 0 (got {v})")
        for name in ("delta_E", "delta_H", "eta_E", "eta_H", "tau"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                out.append(f"loss.{name} must be >= 0 (got {v})")
        if not self.eta_E + self.eta_H > 0:
            out.append("loss.eta_E + loss.eta_H must be > 0")
        return out


@dataclass(frozen=True)
class LossBreakdown:
    l_hyperbolic: float
    l_euclidean: float
    l_hyphc: float
    total: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise NonFiniteError(f"loss component {name} is {value}", name=name)

    def as_dict(self):
        return asdict(self)


class SimilarityLoss(NamedTuple):
    per_example: torch.Tensor
    l_hyperbolic: torch.Tensor
    l_euclidean: torch.Tensor


def softmin_weights(d: torch.Tensor, gamma: float) -> torch.Tensor:
    # softmax normalises with max-subtraction internally
    return torch.softmax(-d / gamma, dim=-1)


def softmin_from_distances(d, gamma: float) -> torch.Tensor:
    """``-sum_k softmax(-d/gamma)_k d_k`` over the last axis."""
    d = torch.as_tensor(d, dtype=DTYPE)
    if d.shape[-1] == 0:
        raise EmptyProxyError("a class needs at least one proxy")
    return -(softmin_weights(d, gamma) * d).sum(dim=-1)


def softmin_similarity(x, proxies, distance: str, gamma: float, cfg: BallConfig | None = None) -> torch.Tensor:
    """Similarity of point(s) ``x`` to one class's ``(K, D)`` proxies.

    ``distance`` is ``"euclidean"`` or ``"hyperbolic"``.
    """
    x = as_tensor(x, "x")
    proxies = as_tensor(proxies, "proxies")
    if proxies.ndim < 2 or proxies.shape[-2] == 0:
        raise EmptyProxyError("a class needs at least one proxy")
    space = {"euclidean": "E", "hyperbolic": "H"}.get(distance)
    if space is None:
        raise ValueError(f"unknown distance {distance!r}")
    squeeze = x.ndim == 1
    d = pairwise_distance(x.reshape(-1, x.shape[-1]), proxies, space, cfg)
    s = softmin_from_distances(d, gamma)
    return s[0] if squeeze else s


def class_similarities(x: torch.Tensor, proxies: torch.Tensor, space: str, gamma: float,
                       cfg: BallConfig | None = None) -> torch.Tensor:
    """``(N, D)`` samples against ``(C, K, D)`` proxies -> ``(N, C)`` similarities."""
    C, K, D = proxies.shape
    flat = proxies.reshape(C * K, D)
    blocks = [
        softmin_from_distances(pairwise_distance(x[i:i + _ROW_CHUNK], flat, space, cfg).reshape(-1, C, K), gamma)
        for i in range(0, x.shape[0], _ROW_CHUNK)
    ]
    return blocks[0] if len(blocks) == 1 else torch.cat(blocks)


def margin_softmax_loss(sim: torch.Tensor, labels: torch.Tensor, lam: float, delta: float) -> torch.Tensor:
    """Per-row ``-log(f+ / (f+ + sum f-))`` with ``f+ = exp(lam(S+ - delta))``, ``f- = exp(lam S-)``."""
    logits = lam * sim
    logits = logits - lam * delta * torch.nn.functional.one_hot(labels, sim.shape[1]).to(sim.dtype)
    return torch.logsumexp(logits, dim=1) - logits.gather(1, labels[:, None]).squeeze(1)


def chest_similarity_loss(batch_E, batch_H, labels, proxies_E, proxies_H,
                          params: LossParams, cfg: BallConfig) -> SimilarityLoss:
    """Two-space similarity loss over a batch.

    ``proxies_E`` is ``(C, K, D_E)`` and ``proxies_H`` its mapped ``(C, K, D_H)``
    view.  Returns the per-example weighted loss and the batch means of the
    hyperbolic and Euclidean terms.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    if proxies_E.ndim != 3 or proxies_H.ndim != 3:
        raise ValueError("proxies must be (C, K, D) tensors")
    C, K = proxies_E.shape[:2]
    if tuple(proxies_H.shape[:2]) != (C, K):
        raise ValueError("Euclidean and hyperbolic proxy banks disagree on (C, K)")
    if K == 0:
        raise EmptyProxyError("a class needs at least one proxy")
    if C < 2:
        raise DegenerateProblemError(f"need at least 2 classes, got {C}")
    if labels.numel() == 0:
        raise ValueError("empty batch")
    if int(labels.min()) < 0 or int(labels.max()) >= C:
        raise IndexError(f"labels must lie in [0, {C}), got range [{int(labels.min())}, {int(labels.max())}]")

    s_H = class_similarities(batch_H, proxies_H, "H", params.gamma_H, cfg)
    s_E = class_similarities(batch_E, proxies_E, "E", params.gamma_E)
    l_H = margin_softmax_loss(s_H, labels, params.lambda_H, params.delta_H)
    l_E = margin_softmax_loss(s_E, labels, params.lambda_E, params.delta_E)
    per_example = params.eta_H * l_H + params.eta_E * l_E
    return SimilarityLoss(per_example, l_H.mean(), l_E.mean())


def proxy_similarity(p_i, p_j, cfg: BallConfig) -> torch.Tensor:
    return torch.exp(-poincare_distance(p_i, p_j, cfg))


def hyphc_regularization(a, b, c, gamma_hyp: float, cfg: BallConfig) -> torch.Tensor:
    """Triplet regulariser ``sum S - sum S * softmax(d / gamma_hyp)``.

    ``a``, ``b``, ``c`` are the triplet's three hyperbolic points (or ``(M, D)``
    stacks of them); returns one value per triplet.
    """
    d = torch.stack([
        poincare_distance(a, b, cfg),
        poincare_distance(a, c, cfg),
        poincare_distance(b, c, cfg),
    ], dim=-1)
    s = torch.exp(-d)
    w = torch.softmax(d / gamma_hyp, dim=-1)
    return s.sum(dim=-1) - (s * w).sum(dim=-1)


def weighted_total(l_hyperbolic, l_euclidean, l_hyphc, params: LossParams):
    return params.eta_H * l_hyperbolic + params.eta_E * l_euclidean + params.tau * l_hyphc


def combined_loss(sim, reg, params: LossParams) -> LossBreakdown:
    """Combine ``(mean L_H, mean L_E)`` and the mean regulariser into a breakdown."""
    l_h, l_e = (float(v) for v in sim)
    reg = float(reg)
    for name, v in (("l_hyperbolic", l_h), ("l_euclidean", l_e), ("l_hyphc", reg)):
        if not math.isfinite(v):
            raise NonFiniteError(f"loss component {name} is {v}", name=name)
    return LossBreakdown(l_h, l_e, reg, weighted_total(l_h, l_e, reg, params))
