"""Self-verification suites behind ``chest check-geometry`` and ``chest check-grad``.

Each check reports the largest violation it observed next to its tolerance.
"""

from __future__ import annotations

import gc
import math
import time
from dataclasses import dataclass

import torch

from . import geometry as geo
from .geometry import DTYPE, BallConfig
from .grad import ParamSet, backward, finite_difference_check
from .losses import (LossParams, chest_similarity_loss, hyphc_regularization, proxy_similarity,
                     softmin_similarity, weighted_total)
from .model import EncoderSpec, ModelSpec, forward


@dataclass
class CheckResult:
    name: str
    observed: float
    tol: float
    passed: bool
    # "max": observed must stay <= tol; "min": observed must stay > tol
    kind: str = "max"

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        bound = "tol" if self.kind == "max" else "must exceed"
        return f"{status}  {self.name:<48s} {self.kind}={self.observed:.3e}  {bound}={self.tol:.1e}"


def _le(name, observed, tol):
    return CheckResult(name, float(observed), tol, bool(observed <= tol))


def _gap(name, x, cfg):
    """Smallest distance to the boundary in ``1 - c|x|^2`` terms; must stay positive."""
    gap = float((1 - cfg.curvature * geo.sq_norm(x)).min())
    return CheckResult(name, gap, 0.0, bool(geo.in_ball(x, cfg).all()), kind="min")


def random_ball_points(n, dim, cfg: BallConfig, gen, max_frac=0.9):
    """Uniform direction, norm uniform in ``[0, max_frac / sqrt(c)]``."""
    x = torch.randn(n, dim, generator=gen, dtype=DTYPE)
    x = x / x.norm(dim=-1, keepdim=True)
    r = torch.rand(n, 1, generator=gen, dtype=DTYPE) * max_frac / math.sqrt(cfg.curvature)
    return x * r


# -- geometry ----------------------------------------------------------------

def geometry_suite(n=10_000, dim=8, seed=0, curvatures=(0.5, 1.0)):
    gen = torch.Generator().manual_seed(seed)
    results = []
    for c in curvatures:
        cfg = BallConfig(curvature=c)
        u, v, w = (random_ball_points(n, dim, cfg, gen) for _ in range(3))
        tag = f"[c={c}]"

        d_uv = geo.poincare_distance(u, v, cfg)
        d_vu = geo.poincare_distance(v, u, cfg)
        d_vw = geo.poincare_distance(v, w, cfg)
        d_uw = geo.poincare_distance(u, w, cfg)
        results.append(_le(f"distance symmetry {tag}", (d_uv - d_vu).abs().max(), 1e-10))
        results.append(_le(f"triangle inequality {tag}", (d_uw - d_uv - d_vw).max().clamp(min=0), 1e-9))
        results.append(_le(f"distance non-negative {tag}", (-d_uv).max().clamp(min=0), 0.0))
        results.append(_le(f"distance to self is zero {tag}", geo.poincare_distance(u, u, cfg).abs().max(), 1e-12))

        zero = torch.zeros_like(v)
        results.append(_le(f"mobius left identity {tag}", (geo.mobius_add(zero, v, cfg) - v).abs().max(), 1e-12))
        results.append(_le(f"mobius cancellation {tag}", geo.mobius_add(u, -u, cfg).abs().max(), 1e-12))
        closed = geo.mobius_add(u, v, cfg)
        results.append(_gap(f"mobius closure, 1 - c|x|^2 {tag}", closed, cfg))

        big = torch.randn(n, dim, generator=gen, dtype=DTYPE) * torch.logspace(-13, 3, n, dtype=DTYPE)[:, None]
        img = geo.exp_map_zero(big, cfg)
        results.append(_gap(f"exp_map_zero image, 1 - c|x|^2 {tag}", img, cfg))
        x = torch.randn(1000, dim, generator=gen, dtype=DTYPE)
        anchored = geo.exp_map_anchor(torch.zeros_like(x), x, cfg)
        results.append(_le(f"exp_map_anchor(0, x) == exp_map_zero(x) {tag}",
                           (anchored - geo.exp_map_zero(x, cfg)).abs().max(), 1e-12))

    cfg = BallConfig(curvature=1e-6)
    gen_small = random_ball_points(n, dim, BallConfig(curvature=4.0), gen, max_frac=1.0)
    a, b = gen_small, random_ball_points(n, dim, BallConfig(curvature=4.0), gen, max_frac=1.0)
    eucl = 2 * (a - b).norm(dim=-1)
    rel = (geo.poincare_distance(a, b, cfg) - eucl).abs() / eucl
    results.append(_le("euclidean limit c=1e-6 (|D - 2|u-v||/(2|u-v|))", rel.max(), 1e-4))
    return results


# -- gradients ---------------------------------------------------------------

def _fd(name, make, configs, seed, h, tol):
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(configs):
        fn, params = make(gen)
        report = finite_difference_check(fn, params, h=h, tol=tol)
        worst = max(worst, report.max_rel_error)
    return _le(f"{name} ({configs} configs)", worst, tol)


def _projection(gen, shape):
    return torch.randn(shape, generator=gen, dtype=DTYPE)


def _case_distance(gen, cfg):
    u, v = (random_ball_points(1, 4, cfg, gen)[0] for _ in range(2))
    return (lambda p: geo.poincare_distance(p["u"], p["v"], cfg)), ParamSet({"u": u, "v": v})


def _case_mobius(gen, cfg):
    u, v = (random_ball_points(1, 4, cfg, gen)[0] for _ in range(2))
    r = _projection(gen, 4)
    return (lambda p: (geo.mobius_add(p["u"], p["v"], cfg) * r).sum()), ParamSet({"u": u, "v": v})


def _case_exp_zero(gen, cfg):
    x = torch.randn(4, generator=gen, dtype=DTYPE) * 0.8
    r = _projection(gen, 4)
    return (lambda p: (geo.exp_map_zero(p["x"], cfg) * r).sum()), ParamSet({"x": x})


def _case_exp_anchor(gen, cfg):
    z = random_ball_points(1, 4, cfg, gen, max_frac=0.6)[0]
    x = torch.randn(4, generator=gen, dtype=DTYPE) * 0.5
    r = _projection(gen, 4)
    return (lambda p: (geo.exp_map_anchor(p["z"], p["x"], cfg) * r).sum()), ParamSet({"z": z, "x": x})


def _case_distance_via_exp(gen, cfg):
    w = torch.randn(4, generator=gen, dtype=DTYPE)
    q = random_ball_points(1, 4, cfg, gen)[0]
    return (lambda p: geo.poincare_distance(geo.exp_map_zero(p["w"], cfg), p["q"], cfg)), ParamSet({"w": w, "q": q})


def _case_softmin(gen, cfg):
    gamma = 5.0
    x = random_ball_points(1, 3, cfg, gen, max_frac=0.5)[0]
    P = random_ball_points(3, 3, cfg, gen, max_frac=0.5)
    xe = torch.randn(3, generator=gen, dtype=DTYPE) * 0.3
    Pe = torch.randn(3, 3, generator=gen, dtype=DTYPE) * 0.3

    def fn(p):
        return (softmin_similarity(p["x"], p["P"], "hyperbolic", gamma, cfg)
                + softmin_similarity(p["xe"], p["Pe"], "euclidean", gamma))
    return fn, ParamSet({"x": x, "P": P, "xe": xe, "Pe": Pe})


def _similarity_inputs(gen, cfg, N=4, C=4, K=2, D=6):
    # D=6 keeps samples away from proxies; |x - p| is not smooth at 0
    params = ParamSet({
        "x_E": torch.randn(N, D, generator=gen, dtype=DTYPE) * 0.1,
        "x_H": random_ball_points(N, D, cfg, gen, max_frac=0.15),
        "P_E": torch.randn(C, K, D, generator=gen, dtype=DTYPE) * 0.1,
        "P_H": random_ball_points(C * K, D, cfg, gen, max_frac=0.15).reshape(C, K, D),
    })
    labels = torch.randint(C, (N,), generator=gen)
    return params, labels


def _case_similarity_loss(gen, cfg):
    lp = LossParams(delta_E=0.1, delta_H=0.1)
    params, labels = _similarity_inputs(gen, cfg)

    def fn(p):
        return chest_similarity_loss(p["x_E"], p["x_H"], labels, p["P_E"], p["P_H"], lp, cfg).per_example.mean()
    return fn, params


def _case_proxy_similarity(gen, cfg):
    a, b = (random_ball_points(1, 3, cfg, gen)[0] for _ in range(2))
    return (lambda p: proxy_similarity(p["a"], p["b"], cfg)), ParamSet({"a": a, "b": b})


def _case_hyphc(gen, cfg):
    pts = random_ball_points(3 * 3, 3, cfg, gen, max_frac=0.7).reshape(3, 3, 3)

    def fn(p):
        t = p["triplets"]
        return hyphc_regularization(t[:, 0], t[:, 1], t[:, 2], 1.0, cfg).mean()
    return fn, ParamSet({"triplets": pts})


def _case_combined(gen, cfg):
    """End-to-end total loss through encoder, shared head and proxy bank."""
    spec = ModelSpec(EncoderSpec("mlp2", 3, 3, hidden_dim=3), hyp_dim=2, num_classes=3, per_class=2)
    lp = LossParams(delta_E=0.1, delta_H=0.1)
    params = ParamSet({
        "encoder.w1": torch.randn(3, 3, generator=gen, dtype=DTYPE) * 0.5,
        "encoder.b1": torch.randn(3, generator=gen, dtype=DTYPE) * 0.1 + 0.3,
        "encoder.w2": torch.randn(3, 3, generator=gen, dtype=DTYPE) * 0.5,
        "encoder.b2": torch.randn(3, generator=gen, dtype=DTYPE) * 0.1,
        "head.w": torch.randn(2, 3, generator=gen, dtype=DTYPE) * 0.5,
        "head.b": torch.randn(2, generator=gen, dtype=DTYPE) * 0.1,
        "proxies": torch.randn(3, 2, 3, generator=gen, dtype=DTYPE) * 0.2,
    })
    x = torch.randn(4, 3, generator=gen, dtype=DTYPE) * 0.5
    labels = torch.randint(3, (4,), generator=gen)
    cls = torch.tensor([[0, 0, 1], [2, 2, 0]])
    idx = torch.tensor([[0, 1, 1], [1, 0, 0]])

    def fn(p):
        x_E, x_H, P_E, P_H = forward(p, spec, x, cfg)
        sim = chest_similarity_loss(x_E, x_H, labels, P_E, P_H, lp, cfg)
        t = P_H[cls, idx]
        reg = hyphc_regularization(t[:, 0], t[:, 1], t[:, 2], lp.gamma_hyp, cfg).mean()
        return weighted_total(sim.l_hyperbolic, sim.l_euclidean, reg, lp)
    return fn, params


GRADIENT_CASES = {
    "poincare_distance": _case_distance,
    "mobius_add": _case_mobius,
    "exp_map_zero": _case_exp_zero,
    "exp_map_anchor": _case_exp_anchor,
    "distance(exp_map_zero(w), p)": _case_distance_via_exp,
    "softmin_similarity": _case_softmin,
    "chest_similarity_loss": _case_similarity_loss,
    "proxy_similarity": _case_proxy_similarity,
    "hyphc_regularization": _case_hyphc,
    "combined_loss (end to end)": _case_combined,
}


def boundary_gradient_check(cfg: BallConfig, n=200, seed=0):
    """Distance gradients stay finite for points at norm ``(1 - 1e-6)/sqrt(c)``."""
    gen = torch.Generator().manual_seed(seed)
    u = torch.randn(n, 4, generator=gen, dtype=DTYPE)
    u = u / u.norm(dim=-1, keepdim=True) * (1 - 1e-6) / math.sqrt(cfg.curvature)
    v = torch.cat([-u[: n // 2], random_ball_points(n - n // 2, 4, cfg, gen)])
    rep = backward(lambda p: geo.poincare_distance(p["u"], p["v"], cfg).sum(), ParamSet({"u": u, "v": v}))
    worst = max(float(g.abs().max()) for g in rep.grads.values())
    return CheckResult(f"distance gradient finite at boundary [c={cfg.curvature}]", worst, math.inf, rep.finite)


def gradient_suite(configs=100, seed=0, h=1e-5, tol=1e-4, cfg: BallConfig | None = None, cases=None):
    cfg = cfg or BallConfig()
    results = []
    for i, (name, make) in enumerate(GRADIENT_CASES.items()):
        if cases is not None and name not in cases:
            continue
        results.append(_fd(name, lambda g, make=make: make(g, cfg), configs, seed + i, h, tol))
    results.append(boundary_gradient_check(cfg, seed=seed))
    return results


def run_timed(suite, **kwargs):
    start = time.perf_counter()
    results = suite(**kwargs)
    return results, time.perf_counter() - start


# -- scaling -----------------------------------------------------------------

def similarity_loss_timing(ns=(1000, 2000, 4000, 8000), C=32, K=2, D_E=16, D_H=16, repeats=15, seed=0):
    """Fastest forward+backward seconds of the two-space similarity loss per batch size.

    Returns ``(times, slope)`` where ``slope`` is the least-squares log-log slope.
    """
    cfg = BallConfig()
    params = LossParams()
    gen = torch.Generator().manual_seed(seed)
    P_E = torch.randn(C, K, D_E, generator=gen, dtype=DTYPE) * 0.1
    P_H = random_ball_points(C * K, D_H, cfg, gen, max_frac=0.5).reshape(C, K, D_H)
    jobs = []
    for n in ns:
        x_E = torch.randn(n, D_E, generator=gen, dtype=DTYPE) * 0.1
        x_H = random_ball_points(n, D_H, cfg, gen, max_frac=0.5)
        labels = torch.randint(0, C, (n,), generator=gen)
        leaves = ParamSet({"x_E": x_E, "x_H": x_H, "P_E": P_E, "P_H": P_H})

        def fn(p, labels=labels):
            return chest_similarity_loss(p["x_E"], p["x_H"], labels, p["P_E"], p["P_H"], params, cfg).per_example.mean()

        jobs.append((fn, leaves))
        for _ in range(2):  # warm-up
            backward(fn, leaves)

    # sizes are interleaved so slow drift on a shared CPU hits every size alike,
    # and the minimum is the least noise-sensitive estimate
    samples = [[] for _ in ns]
    gc_was_on = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for _ in range(repeats):
            for i, (fn, leaves) in enumerate(jobs):
                t0 = time.perf_counter()
                backward(fn, leaves)
                samples[i].append(time.perf_counter() - t0)
    finally:
        if gc_was_on:
            gc.enable()
    times = [min(s) for s in samples]
    lx = [math.log(n) for n in ns]
    ly = [math.log(t) for t in times]
    mx, my = sum(lx) / len(lx), sum(ly) / len(ly)
    slope = sum((a - mx) * (b - my) for a, b in zip(lx, ly)) / sum((a - mx) ** 2 for a in lx)
    return times, slope
