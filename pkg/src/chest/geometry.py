"""Poincare ball primitives.

Points live in the open ball ``{x : c * |x|^2 < 1}``.  Every function works on
the last axis and broadcasts over leading axes, so a ``(N, 1, D)`` tensor
against a ``(1, M, D)`` tensor yields an ``(N, M, ...)`` result.  All math is
carried out in float64.

Euclidean inputs are plain tensors; there is no wrapper type for ball points.
Use :func:`in_ball` / :func:`check_in_ball` where membership has to be
enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import BoundaryError, DimensionError, InvalidInputError

DTYPE = torch.float64

CURVATURE = 0.5
CLIP_RADIUS = 2.3

# exp_map_zero switches to its first-order form below this norm
_SMALL_NORM = 1e-12


@dataclass(frozen=True)
class BallConfig:
    curvature: float = CURVATURE
    clip_radius: float = CLIP_RADIUS
    boundary_eps: float = 1e-5
    arctanh_eps: float = 1e-15

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self):
        out = []
        if not (self.curvature > 0 and math.isfinite(self.curvature)):
            out.append(f"ball.curvature must be > 0 (got {self.curvature})")
        if not (self.clip_radius > 0 and math.isfinite(self.clip_radius)):
            out.append(f"ball.clip_radius must be > 0 (got {self.clip_radius})")
        if not 0 < self.boundary_eps < 1:
            out.append(f"ball.boundary_eps must lie in (0, 1) (got {self.boundary_eps})")
        if not 0 < self.arctanh_eps < 1e-6:
            out.append(f"ball.arctanh_eps must lie in (0, 1e-6) (got {self.arctanh_eps})")
        return out

    @property
    def max_norm(self) -> float:
        """Euclidean radius of the ball, ``1 / sqrt(c)``."""
        return 1.0 / math.sqrt(self.curvature)


def as_tensor(x, name="input") -> torch.Tensor:
    """Convert to a float64 tensor and reject NaN/inf entries."""
    t = torch.as_tensor(x, dtype=DTYPE)
    if not bool(torch.isfinite(t).all()):
        raise InvalidInputError(f"{name} contains non-finite values")
    return t


def _same_dim(u, v):
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")


def sq_norm(x: torch.Tensor, keepdim=True) -> torch.Tensor:
    return (x * x).sum(dim=-1, keepdim=keepdim)


def safe_norm(x: torch.Tensor, keepdim=True) -> torch.Tensor:
    """Euclidean norm whose gradient at the zero vector is 0 rather than NaN."""
    sq = sq_norm(x, keepdim=keepdim)
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def in_ball(x, cfg: BallConfig) -> torch.Tensor:
    """Boolean mask of strict membership, one entry per point."""
    x = torch.as_tensor(x, dtype=DTYPE)
    return cfg.curvature * sq_norm(x, keepdim=False) < 1


def check_in_ball(x, cfg: BallConfig, name="point"):
    if not bool(in_ball(x, cfg).all()):
        raise BoundaryError(f"{name} lies on or outside the ball (c={cfg.curvature})")


def project_to_ball(x, cfg: BallConfig) -> torch.Tensor:
    """Pull points with norm above ``(1 - boundary_eps)/sqrt(c)`` back onto that radius.

    This covers every point with ``c|x|^2 >= 1`` and also points that are
    nominally inside but within rounding distance of the boundary.
    """
    x = as_tensor(x)
    sq = sq_norm(x)
    target = (1.0 - cfg.boundary_eps) / math.sqrt(cfg.curvature)
    outside = sq > target * target
    if not bool(outside.any()):
        return x
    n = torch.sqrt(torch.where(outside, sq, torch.ones_like(sq)))
    return x * torch.where(outside, target / n, torch.ones_like(n))


def _mobius_add_raw(u, v, c):
    uv = (u * v).sum(dim=-1, keepdim=True)
    u2 = sq_norm(u)
    v2 = sq_norm(v)
    num = (1 + 2 * c * uv + c * v2) * u + (1 - c * u2) * v
    den = 1 + 2 * c * uv + c * c * u2 * v2
    return num / den


def mobius_add(u, v, cfg: BallConfig) -> torch.Tensor:
    """Mobius (gyrovector) addition ``u (+)_c v``.

    The result is projected back inside the ball when rounding lands it on or
    beyond the boundary.
    """
    u = as_tensor(u, "u")
    v = as_tensor(v, "v")
    _same_dim(u, v)
    return project_to_ball(_mobius_add_raw(u, v, cfg.curvature), cfg)


def poincare_distance(u, v, cfg: BallConfig) -> torch.Tensor:
    """Geodesic distance ``(2/sqrt(c)) artanh(sqrt(c) |-u (+)_c v|)``.

    The artanh argument is clamped at ``1 - arctanh_eps`` so both the value and
    its gradient stay finite at the boundary.
    """
    u = as_tensor(u, "u")
    v = as_tensor(v, "v")
    _same_dim(u, v)
    sc = math.sqrt(cfg.curvature)
    diff = _mobius_add_raw(-u, v, cfg.curvature)
    arg = (sc * safe_norm(diff, keepdim=False)).clamp(max=1.0 - cfg.arctanh_eps)
    return (2.0 / sc) * torch.atanh(arg)


def euclidean_distance(u, v) -> torch.Tensor:
    u = as_tensor(u, "u")
    v = as_tensor(v, "v")
    _same_dim(u, v)
    return safe_norm(u - v, keepdim=False)


def pairwise_distance(x, y, space: str, cfg: BallConfig | None = None) -> torch.Tensor:
    """``(N, D) x (M, D) -> (N, M)`` distance matrix in space ``"E"`` or ``"H"``."""
    x = torch.as_tensor(x, dtype=DTYPE)
    y = torch.as_tensor(y, dtype=DTYPE)
    a, b = x.unsqueeze(-2), y.unsqueeze(-3)
    if space == "E":
        return euclidean_distance(a, b)
    if space == "H":
        if cfg is None:
            raise ValueError("hyperbolic distances need a BallConfig")
        return poincare_distance(a, b, cfg)
    raise ValueError(f"unknown space {space!r}; expected 'E' or 'H'")


def conformal_factor(x, cfg: BallConfig) -> torch.Tensor:
    """``2 / (1 - c|x|^2)``; one value per point."""
    x = as_tensor(x, "x")
    denom = 1 - cfg.curvature * sq_norm(x, keepdim=False)
    if not bool((denom > 0).all()):
        raise BoundaryError(f"conformal factor undefined: |x|^2 >= 1/c (c={cfg.curvature})")
    return 2.0 / denom


def exp_map_zero(x, cfg: BallConfig) -> torch.Tensor:
    """Exponential map at the origin, ``tanh(sqrt(c)|x|) x / (sqrt(c)|x|)``."""
    x = as_tensor(x, "x")
    sc = math.sqrt(cfg.curvature)
    n = safe_norm(x)
    small = n < _SMALL_NORM
    n_safe = torch.where(small, torch.ones_like(n), n)
    # tanh(s)/s -> 1, so tiny inputs map to themselves (exactly 0 at 0)
    y = torch.where(small, x, torch.tanh(sc * n_safe) * x / (sc * n_safe))
    # tanh saturates to 1.0 in float64 for large inputs
    return project_to_ball(y, cfg)


def exp_map_anchor(z, x, cfg: BallConfig) -> torch.Tensor:
    """Exponential map at ``z``: ``z (+)_c tanh(sqrt(c) lam_z |x| / 2) x / (sqrt(c)|x|)``."""
    z = as_tensor(z, "z")
    x = as_tensor(x, "x")
    _same_dim(z, x)
    lam = conformal_factor(z, cfg).unsqueeze(-1)
    sc = math.sqrt(cfg.curvature)
    n = safe_norm(x)
    small = n < _SMALL_NORM
    n_safe = torch.where(small, torch.ones_like(n), n)
    step = torch.where(small, x * lam / 2, torch.tanh(sc * lam * n_safe / 2) * x / (sc * n_safe))
    return mobius_add(z, project_to_ball(step, cfg), cfg)


def clip_features(x, cfg: BallConfig) -> torch.Tensor:
    """Rescale vectors longer than ``clip_radius`` down to that radius."""
    x = as_tensor(x, "x")
    n = safe_norm(x)
    over = n > cfg.clip_radius
    n_safe = torch.where(over, n, torch.ones_like(n))
    return x * torch.where(over, cfg.clip_radius / n_safe, torch.ones_like(n))
