"""Gradients of scalar losses over named parameter tensors.

Differentiation is delegated to torch's reverse-mode autograd (float64).
:func:`finite_difference_check` is the independent oracle: it only ever
evaluates the loss, never the autograd graph.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import torch

from .errors import InvalidInputError, NonFiniteError
from .geometry import DTYPE


class ParamSet(Mapping):
    """Named float64 tensors with fixed shapes.

    Instances are treated as values: updates produce a new ``ParamSet``
    through :meth:`replace`, and shapes can never change.
    """

    def __init__(self, tensors):
        items = tensors.items() if isinstance(tensors, Mapping) else tensors
        self._t = {}
        for name, value in items:
            if name in self._t:
                raise ValueError(f"duplicate parameter name {name!r}")
            t = torch.as_tensor(value, dtype=DTYPE).detach().clone()
            if not bool(torch.isfinite(t).all()):
                raise InvalidInputError(f"parameter {name!r} contains non-finite values")
            self._t[name] = t

    def __getitem__(self, name):
        return self._t[name]

    def __iter__(self):
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def __repr__(self):
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._t.items())
        return f"ParamSet({shapes})"

    @property
    def shapes(self):
        return {k: tuple(v.shape) for k, v in self._t.items()}

    def replace(self, updates):
        """Return a copy with some tensors swapped out (shapes must match)."""
        new = dict(self._t)
        for name, value in updates.items():
            if name not in new:
                raise KeyError(name)
            value = torch.as_tensor(value, dtype=DTYPE)
            if tuple(value.shape) != tuple(new[name].shape):
                raise ValueError(f"shape of {name!r} is fixed at {tuple(new[name].shape)}")
            new[name] = value
        return ParamSet(new)

    def equal(self, other) -> bool:
        return self.keys() == other.keys() and all(torch.equal(self[k], other[k]) for k in self)


@dataclass
class GradientReport:
    loss: float
    grads: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return all(bool(torch.isfinite(g).all()) for g in self.grads.values())

    def __getitem__(self, name):
        return self.grads[name]


def _check_finite_params(params):
    bad = [k for k, v in params.items() if not bool(torch.isfinite(v).all())]
    return bad


def backward(loss_fn, params: ParamSet) -> GradientReport:
    """Evaluate ``loss_fn(params)`` and its gradient w.r.t. every parameter.

    ``loss_fn`` receives a dict of leaf tensors and must return a scalar
    tensor.  ``params`` itself is never modified.
    """
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = loss_fn(leaves)
    if not torch.is_tensor(loss):
        loss = torch.as_tensor(loss, dtype=DTYPE)
    if loss.numel() != 1:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    value = loss.detach().item()
    if not torch.isfinite(loss):
        bad = _check_finite_params(params)
        where = ", ".join(bad) if bad else ", ".join(params)
        raise NonFiniteError(f"loss evaluated to {value} (parameters: {where})", name=where)

    wanted = list(leaves)
    if loss.requires_grad:
        raw = torch.autograd.grad(loss, [leaves[k] for k in wanted], allow_unused=True)
    else:
        raw = [None] * len(wanted)
    grads = {}
    for k, g in zip(wanted, raw):
        g = torch.zeros_like(params[k]) if g is None else g.detach()
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteError(f"gradient of {k!r} is non-finite", name=k)
        grads[k] = g
    return GradientReport(loss=value, grads=grads)


@dataclass
class FDResult:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class FDReport:
    results: list
    tol: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-8) -> torch.Tensor:
    return (a - b).abs() / torch.maximum(torch.maximum(a.abs(), b.abs()), torch.full_like(a, floor))


def numerical_gradient(loss_fn, params: ParamSet, h: float = 1e-5) -> dict:
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` for every entry."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    base = {k: v.detach().clone() for k, v in params.items()}
    out = {}
    with torch.no_grad():
        for name, t in base.items():
            flat = t.view(-1)
            g = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(loss_fn(base))
                flat[i] = orig - h
                fm = float(loss_fn(base))
                flat[i] = orig
                g[i] = (fp - fm) / (2 * h)
            out[name] = g.view_as(t)
    return out


def finite_difference_check(loss_fn, params: ParamSet, h: float = 1e-5, tol: float = 1e-4) -> FDReport:
    """Compare :func:`backward` against central differences, per parameter.

    Failures are reported in the result, never raised.
    """
    analytic = backward(loss_fn, params).grads
    numeric = numerical_gradient(loss_fn, params, h)
    results = []
    for name in params:
        if params[name].numel() == 0:
            results.append(FDResult(name, 0.0, True))
            continue
        err = float(relative_error(analytic[name], numeric[name]).max())
        results.append(FDResult(name, err, err <= tol))
    return FDReport(results, tol)
