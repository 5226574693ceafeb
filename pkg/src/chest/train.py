"""Batch and proxy-triplet sampling, AdamW, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch

from .errors import ConstraintError, NonFiniteError
from .geometry import DTYPE, BallConfig
from .grad import GradientReport, ParamSet, backward
from .losses import LossBreakdown, LossParams, chest_similarity_loss, hyphc_regularization, weighted_total
from .model import ModelSpec, forward, init_params, is_backbone

log = logging.getLogger(__name__)

BACKBONE = "backbone"
PROXY = "proxy"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    steps: int = 600
    lr_backbone: float = 1e-3
    lr_proxy: float = 1e-2
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    triplets_per_step: int = 8
    seed: int = 0
    # "uniform" or "balanced" (equal expected count per class)
    sampler: str = "uniform"

    def violations(self):
        out = []
        for name in ("batch_size", "steps"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                out.append(f"train.{name} must be an integer >= 1 (got {v!r})")
        for name in ("lr_backbone", "lr_proxy", "adam_eps"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                out.append(f"train.{name} must be > 0 (got {v!r})")
        if not self.weight_decay >= 0:
            out.append(f"train.weight_decay must be >= 0 (got {self.weight_decay!r})")
        if len(self.betas) != 2 or not all(0 < b < 1 for b in self.betas):
            out.append(f"train.betas must be two values in (0, 1) (got {self.betas!r})")
        if not (isinstance(self.triplets_per_step, int) and self.triplets_per_step >= 0):
            out.append(f"train.triplets_per_step must be an integer >= 0 (got {self.triplets_per_step!r})")
        if self.sampler not in ("uniform", "balanced"):
            out.append(f"train.sampler must be 'uniform' or 'balanced' (got {self.sampler!r})")
        return out


# -- sampling ---------------------------------------------------------------

def sample_batch(dataset, batch_size: int, rng: np.random.Generator, balanced: bool = False):
    """Draw ``batch_size`` distinct items; returns ``(inputs, labels)``.

    Uniform by default.  ``balanced`` gives every class the same quota (the
    remainder goes to randomly chosen classes); a class too small for its
    quota hands the shortfall to classes with items to spare.
    """
    n = len(dataset)
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
    if not balanced:
        idx = rng.choice(n, size=batch_size, replace=False)
        return dataset.features[idx], dataset.labels[idx]
    by_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    sizes = np.array([len(m) for m in by_class])
    C = len(by_class)
    quota = np.full(C, batch_size // C)
    quota[rng.choice(C, size=batch_size % C, replace=False)] += 1
    quota = np.minimum(quota, sizes)
    while quota.sum() < batch_size:
        room = np.flatnonzero(quota < sizes)
        short = batch_size - int(quota.sum())
        quota[rng.choice(room, size=min(short, len(room)), replace=False)] += 1
    idx = np.concatenate([rng.choice(m, size=q, replace=False) for m, q in zip(by_class, quota)])
    idx = idx[rng.permutation(len(idx))]
    return dataset.features[idx], dataset.labels[idx]


class Triplet(NamedTuple):
    """Proxy triplet as ``(class, proxy index)`` pairs."""
    anchor: tuple
    positive: tuple
    negative: tuple


def sample_triplets(C: int, K: int, M: int, rng: np.random.Generator):
    """``M`` triplets: anchor and positive share a class with distinct proxies; negative is another class."""
    if M < 1:
        return []
    if C < 2:
        raise ConstraintError(f"triplets need at least 2 classes (C={C})")
    if K < 2:
        raise ConstraintError(f"triplets need two distinct same-class proxies (K={K} < 2)")
    c = rng.integers(C, size=M)
    i = rng.integers(K, size=M)
    j = rng.integers(K - 1, size=M)
    j = j + (j >= i)
    c_neg = rng.integers(C - 1, size=M)
    c_neg = c_neg + (c_neg >= c)
    k = rng.integers(K, size=M)
    return [Triplet((int(a), int(b)), (int(a), int(d)), (int(e), int(f)))
            for a, b, d, e, f in zip(c, i, j, c_neg, k)]


def triplet_arrays(triplets):
    """Index arrays ``(cls, idx)`` of shape ``(M, 3)`` for gathering from a ``(C, K, D)`` bank."""
    a = np.asarray([[t.anchor, t.positive, t.negative] for t in triplets], dtype=np.int64).reshape(-1, 3, 2)
    return torch.from_numpy(a[..., 0]), torch.from_numpy(a[..., 1])


@dataclass
class TripletSampler:
    num_classes: int
    per_class: int
    rng: np.random.Generator
    calls: int = 0

    def sample(self, M: int):
        self.calls += 1
        return sample_triplets(self.num_classes, self.per_class, M, self.rng)


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def group_names(params, group: str):
    if group == BACKBONE:
        return [k for k in params if is_backbone(k)]
    if group == PROXY:
        return [k for k in params if not is_backbone(k)]
    raise ValueError(f"unknown parameter group {group!r}")


def adamw_step(params: ParamSet, grads, state: AdamState, cfg: TrainConfig, group: str):
    """One decoupled-weight-decay Adam update of the tensors in ``group``.

    Returns ``(new_params, new_state)``; inputs are left untouched.
    """
    if isinstance(grads, GradientReport):
        grads = grads.grads
    names = group_names(params, group)
    for k in names:
        if not bool(torch.isfinite(grads[k]).all()):
            raise NonFiniteError(f"gradient of {k!r} is non-finite; step aborted", name=k)
    lr = cfg.lr_backbone if group == BACKBONE else cfg.lr_proxy
    b1, b2 = cfg.betas
    t = state.t + 1
    m_new, v_new, updates = dict(state.m), dict(state.v), {}
    for k in names:
        g = grads[k]
        w = params[k]
        m = b1 * state.m.get(k, torch.zeros_like(w)) + (1 - b1) * g
        v = b2 * state.v.get(k, torch.zeros_like(w)) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        updates[k] = w - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps) - lr * cfg.weight_decay * w
        m_new[k], v_new[k] = m, v
    return params.replace(updates), AdamState(t, m_new, v_new)


# -- loop -------------------------------------------------------------------

@dataclass
class TrainState:
    params: ParamSet
    opt_backbone: AdamState
    opt_proxy: AdamState
    batch_rng: np.random.Generator
    triplets: TripletSampler
    step: int = 0
    last_triplets: list = field(default_factory=list)


def init_state(spec: ModelSpec, cfg: TrainConfig) -> TrainState:
    """Parameters and both RNG streams are derived from ``cfg.seed``."""
    init_seq, batch_seq, trip_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(int(init_seq.generate_state(1)[0]), spec)
    return TrainState(
        params=params,
        opt_backbone=AdamState(),
        opt_proxy=AdamState(),
        batch_rng=np.random.default_rng(batch_seq),
        triplets=TripletSampler(spec.num_classes, spec.per_class, np.random.default_rng(trip_seq)),
    )


def _loss_terms(p, spec, inputs, labels, triplets, loss_params, ball):
    x_E, x_H, P_E, P_H = forward(p, spec, inputs, ball)
    sim = chest_similarity_loss(x_E, x_H, labels, P_E, P_H, loss_params, ball)
    if triplets:
        cls, idx = triplet_arrays(triplets)
        pts = P_H[cls, idx]
        reg = hyphc_regularization(pts[:, 0], pts[:, 1], pts[:, 2], loss_params.gamma_hyp, ball).mean()
    else:
        reg = torch.zeros((), dtype=DTYPE)
    return sim.l_hyperbolic, sim.l_euclidean, reg


def evaluate_loss(params, spec: ModelSpec, batch, triplets, loss_params: LossParams, ball: BallConfig) -> LossBreakdown:
    """Loss breakdown at ``params`` without updating anything."""
    inputs, labels = (torch.as_tensor(batch[0], dtype=DTYPE), torch.as_tensor(batch[1], dtype=torch.long))
    with torch.no_grad():
        l_h, l_e, reg = _loss_terms(params, spec, inputs, labels, triplets, loss_params, ball)
    return LossBreakdown(float(l_h), float(l_e), float(reg),
                         float(weighted_total(l_h, l_e, reg, loss_params)))


def train_step(state: TrainState, batch, spec: ModelSpec, loss_params: LossParams,
               cfg: TrainConfig, ball: BallConfig) -> LossBreakdown:
    """Forward, backward and one AdamW update per parameter group.

    ``state`` is advanced in place; the returned breakdown is the loss before
    the update.
    """
    inputs = torch.as_tensor(batch[0], dtype=DTYPE)
    labels = torch.as_tensor(batch[1], dtype=torch.long)
    triplets = []
    if loss_params.tau > 0 and cfg.triplets_per_step > 0:
        triplets = state.triplets.sample(cfg.triplets_per_step)
    state.last_triplets = triplets
    parts = {}

    def loss_fn(p):
        l_h, l_e, reg = _loss_terms(p, spec, inputs, labels, triplets, loss_params, ball)
        parts.update(l_h=l_h.item(), l_e=l_e.item(), reg=reg.item())
        return weighted_total(l_h, l_e, reg, loss_params)

    report = backward(loss_fn, state.params)
    params, state.opt_backbone = adamw_step(state.params, report, state.opt_backbone, cfg, BACKBONE)
    params, state.opt_proxy = adamw_step(params, report, state.opt_proxy, cfg, PROXY)
    for k, v in params.items():
        if not bool(torch.isfinite(v).all()):
            raise NonFiniteError(f"parameter {k!r} became non-finite at step {state.step}", name=k)
    state.params = params
    state.step += 1
    return LossBreakdown(parts["l_h"], parts["l_e"], parts["reg"], report.loss)


def train(dataset, spec: ModelSpec, loss_params: LossParams, cfg: TrainConfig, ball: BallConfig,
          on_step=None, state: TrainState | None = None) -> TrainState:
    """Run ``cfg.steps`` steps; ``on_step(step, breakdown, state)`` is called after each."""
    if state is None:
        state = init_state(spec, cfg)
    balanced = cfg.sampler == "balanced"
    for _ in range(cfg.steps):
        batch = sample_batch(dataset, cfg.batch_size, state.batch_rng, balanced)
        breakdown = train_step(state, batch, spec, loss_params, cfg, ball)
        if on_step is not None:
            on_step(state.step, breakdown, state)
    return state
