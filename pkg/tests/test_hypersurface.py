import math
import warnings

import numpy as np
import pytest

from nullfront.hypersurface import (GraphSlice, HypersurfaceError, Immersion, RankDeficientWarning,
                                    induced_metric, normal_batch, reparameterize, slice_as_immersion,
                                    spacelike_check, unit_future_normal)
from nullfront.lorentz_chart import Kind, MetricModel, TimeSense, classify, inner, minkowski
from nullfront.metric_dsl import MetricProgram, compile_metric

MINK = minkowski(3)
CONFORMAL = compile_metric(MetricProgram.conformal("1 + 0.1*x0^2", 3))


def graph(f, **params):
    return slice_as_immersion(GraphSlice(f, 3, params=params))


def sample_params(rng, n=20):
    return rng.uniform(-1, 1, size=(n, 3))


def test_flat_slice_identity():
    np.testing.assert_array_equal(induced_metric(MINK, graph("0"), np.zeros(3)), np.eye(3))


def test_tilted_induced_metric(derived):
    gb = induced_metric(MINK, graph("0.3*x0"), np.array([0.2, -0.4, 0.7]))
    np.testing.assert_allclose(gb, derived["induced_metric_tilt"], atol=1e-12)


def test_null_graph_degenerate():
    rep = spacelike_check(MINK, graph("x0"), np.zeros((1, 3)))
    assert not rep.passed
    assert abs(rep.min_eigenvalue) < 1e-9


@pytest.mark.parametrize("f, ok, mineig", [("0", True, 1.0), ("0.3*x0", True, None), ("2*x0", False, None)])
def test_spacelike_check(derived, f, ok, mineig):
    rep = spacelike_check(MINK, graph(f), np.random.default_rng(0).uniform(-1, 1, (10, 3)))
    assert rep.passed is ok
    if f == "0.3*x0":
        assert rep.min_eigenvalue == pytest.approx(derived["spacelike_min_eig_tilt"], abs=1e-12)
    elif mineig is not None:
        assert rep.min_eigenvalue == pytest.approx(mineig, abs=1e-12)


def test_flat_normal():
    V = unit_future_normal(MINK, graph("0"), np.zeros(3))
    np.testing.assert_allclose(V.components, [0, 0, 0, 1], atol=1e-15)


def test_tilted_normal(derived):
    V = unit_future_normal(MINK, graph("0.3*x0"), np.array([0.5, 0.1, -0.2]))
    np.testing.assert_allclose(V.components, derived["normal_tilt"], atol=1e-10)


def test_normal_is_future():
    # a parameterization with reversed time still yields the future normal
    imm = Immersion(dim=3, map=lambda p: np.concatenate([p, -0.2 * p[..., :1]], axis=-1))
    V = unit_future_normal(MINK, imm, np.zeros(3))
    cc = classify(MINK, V.base, V)
    assert cc.kind is Kind.TIMELIKE and cc.time_sense is TimeSense.FUTURE


def test_timelike_graph_has_no_normal():
    with pytest.raises(HypersurfaceError):
        unit_future_normal(MINK, graph("2*x0"), np.zeros(3))


def test_graph_jacobian_columns():
    J = graph("0.3*x0").jac(np.zeros(3))
    np.testing.assert_allclose(J, [[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.3, 0, 0]], atol=1e-10)
    np.testing.assert_array_equal(graph("0").jac(np.ones(3)), np.vstack([np.eye(3), np.zeros(3)]))


def test_graph_parameter():
    imm = graph("tau", tau=2.0)
    np.testing.assert_array_equal(imm.point(np.array([1.0, 2, 3])), [1, 2, 3, 2])


def test_bad_graph_expression():
    with pytest.raises(Exception):
        graph("t + x0")


@pytest.mark.parametrize("model, f", [(MINK, "0.3*x0 + 0.1*x1^2"), (CONFORMAL, "0.2*sin(x0) + 0.1*x2")])
def test_normal_orthonormal(rng, model, f):
    imm = graph(f)
    ps = sample_params(rng)
    V = normal_batch(model, imm, ps)
    for p, v in zip(ps, V):
        x = imm.point(p)
        J = imm.jac(p)
        for i in range(3):
            assert abs(inner(model, x, v, J[:, i])) <= 1e-10
        assert abs(inner(model, x, v, v) + 1) <= 1e-10


def test_fd_jacobian_for_parametric():
    imm = Immersion(dim=3, map=lambda p: np.concatenate([p, 0.1 * np.sin(p[..., :1])], axis=-1))
    J = imm.jac(np.array([0.4, 0, 0]))
    assert J[3, 0] == pytest.approx(0.1 * math.cos(0.4), abs=1e-10)


def test_reparameterization_invariance(rng):
    imm = graph("0.3*x0 + 0.1*x1^2")
    A = np.array([[2.0, 0.3, 0], [0, 1.5, 0], [0.1, 0, 0.7]])

    def phi(q):
        return q @ A.T + 0.05 * q ** 3

    def phi_jac(q):
        return A + np.diag(0.15 * q ** 2)

    re = reparameterize(imm, phi, phi_jac)
    for q in sample_params(rng, 10) * 0.5:
        a = unit_future_normal(MINK, re, q).components
        b = unit_future_normal(MINK, imm, phi(q)).components
        np.testing.assert_allclose(a, b, atol=1e-8)


def test_rank_deficient_warns():
    imm = Immersion(dim=3, map=lambda p: np.concatenate([p[..., :1], p[..., :1], p[..., 2:], 0 * p[..., :1]],
                                                        axis=-1))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        induced_metric(MINK, imm, np.zeros(3))
    assert any(issubclass(x.category, RankDeficientWarning) for x in w)
