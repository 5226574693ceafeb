import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from chest import geometry as geo
from chest.errors import BoundaryError, DimensionError, InvalidInputError
from chest.geometry import BallConfig

C1 = BallConfig(curvature=1.0)
C05 = BallConfig(curvature=0.5)

# mpmath, 30 digits
MOBIUS_1D = 0.636363636363636363636
ATANH_HALF_X2 = 1.098612288668109691395
DIST_C05 = 1.045100914760959759572
TANH_06 = 0.537049566998035285862
ANCHOR_1D = 0.619113237605363488707


def t(*xs):
    return torch.tensor(xs, dtype=torch.float64)


def test_mobius_left_identity():
    assert torch.equal(geo.mobius_add(t(0, 0), t(0.3, 0.1), C05), t(0.3, 0.1))


def test_mobius_cancellation():
    assert torch.allclose(geo.mobius_add(t(0.5, 0), t(-0.5, 0), C1), t(0, 0), atol=1e-15)


def test_mobius_one_dimensional():
    out = geo.mobius_add(t(0.5, 0), t(0.2, 0), C1)
    assert out[0].item() == pytest.approx(MOBIUS_1D, abs=1e-12)
    assert out[1].item() == 0


def test_mobius_dimension_mismatch():
    with pytest.raises(DimensionError):
        geo.mobius_add(t(0.1, 0), t(0.1, 0, 0), C1)


def test_mobius_rejects_nan():
    with pytest.raises(InvalidInputError):
        geo.mobius_add(t(float("nan"), 0), t(0.1, 0), C1)


def test_distance_values():
    assert geo.poincare_distance(t(0, 0), t(0.5, 0), C1).item() == pytest.approx(ATANH_HALF_X2, abs=1e-12)
    assert geo.poincare_distance(t(0, 0), t(0.5, 0), C05).item() == pytest.approx(DIST_C05, abs=1e-12)


def test_distance_to_self():
    u = t(0.3, -0.4)
    assert geo.poincare_distance(u, u, C1).item() == 0


def test_distance_finite_at_boundary():
    u = t(1 - 1e-17, 0)
    d = geo.poincare_distance(-u, u, C1)
    assert math.isfinite(d.item())


def test_conformal_factor():
    assert geo.conformal_factor(t(0, 0), C05).item() == 2
    assert geo.conformal_factor(t(math.sqrt(0.5), 0), C1).item() == pytest.approx(4)
    assert geo.conformal_factor(t(1.0, 0), C05).item() == pytest.approx(4)
    with pytest.raises(BoundaryError):
        geo.conformal_factor(t(1.0, 0), C1)


def test_exp_map_zero():
    assert torch.equal(geo.exp_map_zero(t(0, 0, 0), C05), t(0, 0, 0))
    out = geo.exp_map_zero(t(0.6, 0), C1)
    assert out[0].item() == pytest.approx(TANH_06, abs=1e-12)
    far = geo.exp_map_zero(t(1e6, 3e5), C05)
    assert far.norm().item() < 1 / math.sqrt(0.5)


def test_exp_map_zero_gradient_at_origin():
    x = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    geo.exp_map_zero(x, C05).sum().backward()
    assert torch.isfinite(x.grad).all()


def test_exp_map_anchor():
    assert geo.exp_map_anchor(t(0, 0), t(0.6, 0), C1)[0].item() == pytest.approx(TANH_06, abs=1e-12)
    z = t(0.2, -0.1)
    assert torch.allclose(geo.exp_map_anchor(z, t(0, 0), C1), z, atol=1e-15)
    out = geo.exp_map_anchor(t(0.2, 0), t(0.5, 0), C1)
    assert out[0].item() == pytest.approx(ANCHOR_1D, abs=1e-12)


def test_clip_features():
    x = t(0.6, 0.8)
    assert torch.equal(geo.clip_features(x, C05), x)
    y = t(0, 4.6)
    assert torch.allclose(geo.clip_features(y, C05), y / 2, atol=1e-15)
    assert BallConfig().clip_radius == 2.3


def test_project_to_ball():
    assert torch.equal(geo.project_to_ball(t(0.5, 0), C1), t(0.5, 0))
    assert geo.project_to_ball(t(2, 0), C1)[0].item() == pytest.approx(0.99999, abs=1e-15)
    edge = geo.project_to_ball(t(1 / math.sqrt(0.5), 0), C05)
    assert edge.norm().item() == pytest.approx((1 - 1e-5) / math.sqrt(0.5), abs=1e-14)


@pytest.mark.parametrize("kwargs", [
    dict(curvature=0.0), dict(curvature=-1.0), dict(clip_radius=0.0),
    dict(boundary_eps=1.0), dict(arctanh_eps=1e-3),
])
def test_ball_config_rejects(kwargs):
    with pytest.raises(ValueError):
        BallConfig(**kwargs)


def test_pairwise_distance_matches_loop():
    g = torch.Generator().manual_seed(1)
    x = torch.rand(5, 3, generator=g, dtype=torch.float64) * 0.5
    y = torch.rand(4, 3, generator=g, dtype=torch.float64) * 0.5
    d = geo.pairwise_distance(x, y, "H", C05)
    for i in range(5):
        for j in range(4):
            assert d[i, j].item() == pytest.approx(geo.poincare_distance(x[i], y[j], C05).item(), abs=1e-14)
    with pytest.raises(ValueError):
        geo.pairwise_distance(x, y, "Q", C05)


def ball_vec(dim, c):
    r = 0.9 / math.sqrt(c)
    return st.lists(st.floats(-1, 1, allow_nan=False), min_size=dim, max_size=dim).map(
        lambda v: torch.tensor(v, dtype=torch.float64) * r / max(1.0, math.sqrt(sum(a * a for a in v)) or 1.0))


@settings(max_examples=200, deadline=None)
@given(c=st.sampled_from([0.5, 1.0]), data=st.data())
def test_metric_properties(c, data):
    cfg = BallConfig(curvature=c)
    u, v, w = (data.draw(ball_vec(3, c)) for _ in range(3))
    d_uv = geo.poincare_distance(u, v, cfg).item()
    assert abs(d_uv - geo.poincare_distance(v, u, cfg).item()) <= 1e-10
    assert d_uv >= 0
    d_uw = geo.poincare_distance(u, w, cfg).item()
    assert d_uw <= d_uv + geo.poincare_distance(v, w, cfg).item() + 1e-9


@settings(max_examples=200, deadline=None)
@given(c=st.sampled_from([0.5, 1.0]), data=st.data())
def test_mobius_properties(c, data):
    cfg = BallConfig(curvature=c)
    u, v = data.draw(ball_vec(4, c)), data.draw(ball_vec(4, c))
    assert (geo.mobius_add(torch.zeros(4, dtype=torch.float64), v, cfg) - v).abs().max() <= 1e-12
    assert geo.mobius_add(u, -u, cfg).abs().max() <= 1e-12
    assert bool(geo.in_ball(geo.mobius_add(u, v, cfg), cfg))


@settings(max_examples=200, deadline=None)
@given(x=st.lists(st.floats(-1e8, 1e8, allow_nan=False), min_size=3, max_size=3),
       c=st.sampled_from([0.5, 1.0, 2.0]))
def test_exp_map_zero_stays_in_ball(x, c):
    cfg = BallConfig(curvature=c)
    assert bool(geo.in_ball(geo.exp_map_zero(x, cfg), cfg))


@settings(max_examples=100, deadline=None)
@given(x=st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3))
def test_exp_map_anchor_at_origin(x):
    x = torch.tensor(x, dtype=torch.float64)
    a = geo.exp_map_anchor(torch.zeros(3, dtype=torch.float64), x, C05)
    assert (a - geo.exp_map_zero(x, C05)).abs().max() <= 1e-12


def test_euclidean_limit():
    cfg = BallConfig(curvature=1e-6)
    g = torch.Generator().manual_seed(0)
    u = (torch.rand(1000, 3, generator=g, dtype=torch.float64) - 0.5) * 0.5
    v = (torch.rand(1000, 3, generator=g, dtype=torch.float64) - 0.5) * 0.5
    ref = 2 * (u - v).norm(dim=-1)
    assert ((geo.poincare_distance(u, v, cfg) - ref).abs() / ref).max() <= 1e-4
