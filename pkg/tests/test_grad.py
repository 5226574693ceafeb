import math

import pytest
import torch

from chest import geometry as geo
from chest.checks import boundary_gradient_check
from chest.errors import InvalidInputError, NonFiniteError
from chest.geometry import BallConfig
from chest.grad import ParamSet, backward, finite_difference_check, numerical_gradient, relative_error
from chest.losses import LossParams, chest_similarity_loss, hyphc_regularization


def test_paramset_contract():
    p = ParamSet({"w": [1.0, 2.0]})
    assert p.shapes == {"w": (2,)}
    with pytest.raises(ValueError):
        ParamSet([("a", [1.0]), ("a", [2.0])])
    with pytest.raises(InvalidInputError):
        ParamSet({"a": [float("inf")]})
    with pytest.raises(ValueError):
        p.replace({"w": [1.0, 2.0, 3.0]})
    q = p.replace({"w": [0.0, 0.0]})
    assert p["w"].tolist() == [1.0, 2.0] and q["w"].tolist() == [0.0, 0.0]


def test_constant_loss_gives_zero_gradient():
    rep = backward(lambda p: torch.tensor(3.0, dtype=torch.float64), ParamSet({"w": [1.0, 2.0]}))
    assert rep.loss == 3.0
    assert rep["w"].tolist() == [0.0, 0.0]


def test_quadratic_gradient():
    rep = backward(lambda p: 0.5 * (p["w"] ** 2).sum(), ParamSet({"w": [1.0, 2.0]}))
    assert rep["w"].tolist() == [1.0, 2.0]
    assert rep.finite


def test_backward_leaves_params_untouched():
    p = ParamSet({"w": [1.0, 2.0]})
    before = p["w"].clone()
    backward(lambda q: (q["w"] ** 3).sum(), p)
    assert torch.equal(p["w"], before)


def test_backward_is_deterministic():
    g = torch.Generator().manual_seed(0)
    p = ParamSet({"w": torch.rand(5, 3, generator=g, dtype=torch.float64) * 0.3})
    cfg = BallConfig()

    def fn(q):
        return geo.pairwise_distance(q["w"], q["w"][:2], "H", cfg).sum()

    a, b = backward(fn, p), backward(fn, p)
    assert torch.equal(a["w"], b["w"])


def test_backward_names_non_finite_gradient():
    with pytest.raises(NonFiniteError) as info:
        backward(lambda p: torch.sqrt(p["w"]).sum(), ParamSet({"w": [0.0, 1.0]}))
    assert info.value.name == "w"


def test_backward_rejects_non_finite_loss():
    with pytest.raises(NonFiniteError):
        backward(lambda p: torch.log(p["w"] - 1).sum(), ParamSet({"w": [0.5]}))


def test_quadratic_finite_differences():
    for h in (1e-3, 1e-4, 1e-5):
        rep = finite_difference_check(lambda p: 0.5 * (p["w"] ** 2).sum(), ParamSet({"w": [1.0, -2.0, 3.0]}), h=h)
        assert rep.passed and rep.max_rel_error <= 1e-8


def test_numerical_gradient_rejects_bad_step():
    with pytest.raises(ValueError):
        numerical_gradient(lambda p: p["w"].sum(), ParamSet({"w": [1.0]}), h=0)


def test_relative_error_floor():
    a = torch.tensor([1e-12], dtype=torch.float64)
    assert relative_error(a, torch.zeros(1, dtype=torch.float64)).item() == pytest.approx(1e-4)


def test_distance_through_exp_map_matches_fd():
    cfg = BallConfig()
    g = torch.Generator().manual_seed(3)
    w = torch.randn(4, generator=g, dtype=torch.float64)
    p = geo.exp_map_zero(torch.randn(4, generator=g, dtype=torch.float64) * 0.5, cfg)
    rep = finite_difference_check(lambda q: geo.poincare_distance(geo.exp_map_zero(q["w"], cfg), q["p"], cfg),
                                  ParamSet({"w": w, "p": p}))
    assert rep.passed, rep.results


def test_similarity_loss_four_classes_matches_fd():
    cfg = BallConfig()
    g = torch.Generator().manual_seed(5)
    lp = LossParams()
    x_E = torch.randn(3, 6, generator=g, dtype=torch.float64) * 0.1
    P_E = torch.randn(4, 2, 6, generator=g, dtype=torch.float64) * 0.1
    x_H = geo.exp_map_zero(torch.randn(3, 5, generator=g, dtype=torch.float64) * 0.1, cfg)
    P_H = geo.exp_map_zero(torch.randn(4, 2, 5, generator=g, dtype=torch.float64) * 0.1, cfg)
    labels = torch.tensor([0, 3, 1])

    def fn(q):
        return chest_similarity_loss(q["x_E"], q["x_H"], labels, q["P_E"], q["P_H"], lp, cfg).per_example.mean()

    rep = finite_difference_check(fn, ParamSet({"x_E": x_E, "x_H": x_H, "P_E": P_E, "P_H": P_H}))
    assert rep.passed, rep.results


def test_hyphc_matches_fd():
    cfg = BallConfig()
    g = torch.Generator().manual_seed(7)
    pts = geo.exp_map_zero(torch.randn(3, 5, 4, generator=g, dtype=torch.float64), cfg)

    def fn(q):
        return hyphc_regularization(q["a"], q["b"], q["c"], 1.0, cfg).mean()

    rep = finite_difference_check(fn, ParamSet({"a": pts[0], "b": pts[1], "c": pts[2]}))
    assert rep.passed, rep.results


@pytest.mark.parametrize("c", [0.5, 1.0])
def test_distance_gradient_finite_near_boundary(c):
    res = boundary_gradient_check(BallConfig(curvature=c))
    assert res.passed and math.isfinite(res.observed)
