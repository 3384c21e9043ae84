import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullfront import metric_dsl as dsl
from nullfront.lorentz_chart import (ChartError, Kind, MetricModel, SingularMetricError, TangentVector,
                                     TimeSense, christoffel, classify, inner, metric_at,
                                     metric_derivative, minkowski, validate_lorentzian)

finite = st.floats(-10, 10, allow_nan=False)
vec4 = st.lists(finite, min_size=4, max_size=4).map(np.array)


def curved(analytic=False, fd_step=1e-5):
    def ev(x):
        return np.diag([1.0, 1.0, 1.0, -math.exp(2 * x[0])])

    def der(x):
        d = np.zeros((4, 4, 4))
        d[0, 3, 3] = -2 * math.exp(2 * x[0])
        return d

    return MetricModel(dim=3, evaluator=ev, derivative=der if analytic else None, fd_step=fd_step)


def test_minkowski_metric_everywhere(rng):
    M = minkowski(3)
    for x in rng.normal(size=(5, 4)):
        assert np.array_equal(metric_at(M, x), np.diag([1.0, 1, 1, -1]))


def test_dsl_metric_at_origin():
    M = dsl.compile_metric(dsl.MetricProgram.diag("1", "-exp(2*x0)"))
    assert np.array_equal(metric_at(M, [0.0, 0.0]), np.diag([1.0, -1.0]))


def test_nonsymmetric_output_is_symmetrized():
    A = np.array([[1.0, 2.0], [0.0, -1.0]])
    M = MetricModel(dim=1, evaluator=lambda x: A)
    assert np.array_equal(metric_at(M, [0.0, 0.0]), (A + A.T) / 2)


def test_metric_errors():
    M = minkowski(3)
    with pytest.raises(ChartError):
        metric_at(M, [0.0, 0.0, 0.0])
    with pytest.raises(ChartError):
        metric_at(M, [0.0, np.nan, 0.0, 0.0])
    bad = MetricModel(dim=1, evaluator=lambda x: np.array([[np.inf, 0], [0, -1.0]]))
    with pytest.raises(ChartError):
        metric_at(bad, [0.0, 0.0])
    wrong = MetricModel(dim=1, evaluator=lambda x: np.eye(3))
    with pytest.raises(ChartError):
        metric_at(wrong, [0.0, 0.0])


@pytest.mark.parametrize("u, v, expected", [
    ([0, 0, 0, 1], [0, 0, 0, 1], -1.0),
    ([1, 0, 0, 1], [1, 0, 0, -1], 2.0),
    ([0, 0, 0, 0], [3, 1, 4, 1], 0.0),
])
def test_inner_examples(u, v, expected):
    assert inner(minkowski(3), np.zeros(4), u, v) == expected


def test_inner_base_mismatch():
    M = minkowski(3)
    u = TangentVector(np.ones(4), np.array([1.0, 0, 0, 0]))
    with pytest.raises(ChartError):
        inner(M, np.zeros(4), u, u)


@settings(max_examples=60, deadline=None)
@given(vec4, vec4, vec4, finite, finite)
def test_inner_bilinear_and_symmetric(u, v, w, a, b):
    M = curved()
    x = np.array([0.2, -0.1, 0.3, 0.0])
    lhs = inner(M, x, a * u + b * v, w)
    rhs = a * inner(M, x, u, w) + b * inner(M, x, v, w)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)
    assert inner(M, x, u, w) == pytest.approx(inner(M, x, w, u), rel=1e-14, abs=1e-12)


@pytest.mark.parametrize("v, kind, sense", [
    ([0, 0, 0, 1], Kind.TIMELIKE, TimeSense.FUTURE),
    ([1, 0, 0, 1], Kind.NULL, TimeSense.FUTURE),
    ([1, 0, 0, 0], Kind.SPACELIKE, TimeSense.NONE),
    ([0, 0, 0, -2], Kind.TIMELIKE, TimeSense.PAST),
    ([0, 1, 0, -1], Kind.NULL, TimeSense.PAST),
    ([0, 0, 0, 0], Kind.ZERO, TimeSense.NONE),
])
def test_classify_examples(v, kind, sense):
    cc = classify(minkowski(3), np.zeros(4), np.array(v, dtype=float), null_tol=1e-12)
    assert (cc.kind, cc.time_sense) == (kind, sense)


def test_classify_null_tolerance_is_relative():
    M = minkowski(3)
    v = np.array([1.0, 0, 0, 1.0 + 1e-11])
    assert classify(M, np.zeros(4), v).kind is Kind.NULL
    assert classify(M, np.zeros(4), 1e6 * v).kind is Kind.NULL
    assert classify(M, np.zeros(4), v, null_tol=0.0).kind is Kind.TIMELIKE


@settings(max_examples=60, deadline=None)
@given(vec4, st.floats(1e-3, 1e3))
def test_classify_scale_invariant(v, c):
    M = minkowski(3)
    a = classify(M, np.zeros(4), v)
    b = classify(M, np.zeros(4), c * v)
    assert (a.kind, a.time_sense) == (b.kind, b.time_sense)


def test_christoffel_flat_is_zero():
    assert not np.any(christoffel(minkowski(3), np.array([1.0, 2, 3, 4])))


@pytest.mark.parametrize("analytic", [False, True])
def test_christoffel_curved_matches_symbolic(derived, analytic):
    G = christoffel(curved(analytic), np.zeros(4))
    np.testing.assert_allclose(G, derived["christoffel_curved_origin"], atol=1e-9)
    G = christoffel(curved(analytic), np.array([0.3, 0, 0, 0]))
    np.testing.assert_allclose(G, derived["christoffel_curved_x0_0.3"], atol=1e-9)


def test_christoffel_via_dsl_matches_symbolic(derived):
    M = dsl.compile_metric(dsl.MetricProgram.diag("1", "1", "1", "-exp(2*x0)"))
    np.testing.assert_allclose(christoffel(M, np.zeros(4)), derived["christoffel_curved_origin"],
                               atol=1e-9)


def test_fd_and_analytic_paths_agree(rng):
    h = 1e-5
    for x in rng.uniform(-0.5, 0.5, size=(10, 4)):
        a = christoffel(curved(True), x)
        f = christoffel(curved(False, h), x)
        assert np.max(np.abs(a - f)) <= 10 * h ** 2


def test_christoffel_symmetric(rng):
    M = dsl.compile_metric(dsl.MetricProgram(
        dim=2, entries={(0, 0): "1 + 0.1*x1^2", (0, 2): "0.2*sin(x0)", (1, 1): "exp(0.1*x0)",
                        (2, 2): "-(1 + 0.3*x0^2)"}))
    for x in rng.uniform(-1, 1, size=(5, 3)):
        G = christoffel(M, x)
        assert np.array_equal(G, np.swapaxes(G, 1, 2))


def test_metric_compatibility(rng):
    """d_w g_ij = Gamma^l_{wi} g_lj + Gamma^l_{wj} g_il (Levi-Civita, discrete check)."""
    M = dsl.compile_metric(dsl.MetricProgram(
        dim=2, entries={(0, 0): "1 + 0.1*x1^2", (0, 1): "0.05*x0*x1", (1, 1): "exp(0.1*x0)",
                        (2, 2): "-(1 + 0.3*x0^2)"}))
    for x in rng.uniform(-1, 1, size=(5, 3)):
        w = rng.normal(size=3)
        h = 1e-4
        dg = (metric_at(M, x + h * w) - metric_at(M, x - h * w)) / (2 * h)
        Gam = christoffel(M, x)
        G = metric_at(M, x)
        gw = np.einsum("lwi,w->li", Gam, w)
        recon = gw.T @ G + G @ gw
        np.testing.assert_allclose(dg, recon, atol=1e-7)


def test_singular_metric_raises():
    M = MetricModel(dim=1, evaluator=lambda x: np.diag([0.0, -1.0]))
    with pytest.raises(SingularMetricError):
        christoffel(M, np.zeros(2))


def test_metric_derivative_shape():
    d = metric_derivative(curved(), np.zeros(4))
    assert d.shape == (4, 4, 4)
    assert d[0, 3, 3] == pytest.approx(-2.0, abs=1e-8)


def test_validate_minkowski_random(rng):
    rep = validate_lorentzian(minkowski(3), rng.normal(size=(100, 4)))
    assert rep.ok and rep.violations == [] and rep.n_points == 100


def test_validate_riemannian_fails_everywhere(rng):
    M = MetricModel(dim=3, evaluator=lambda x: np.eye(4))
    rep = validate_lorentzian(M, rng.normal(size=(7, 4)))
    assert len(rep.violations) == 7
    assert all("signature" in r for _, _, r in rep.violations)


def test_validate_past_orientation_warns():
    M = MetricModel(dim=3, evaluator=lambda x: np.diag([1.0, 1, 1, -1]),
                    orientation=lambda x: np.array([0, 0, 0, -1.0]))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rep = validate_lorentzian(M, [np.zeros(4)])
    assert rep.ok
    assert len(rep.warnings) == 1
    assert w


def test_validate_spacelike_orientation_violates():
    M = MetricModel(dim=3, evaluator=lambda x: np.diag([1.0, 1, 1, -1]),
                    orientation=lambda x: np.array([1.0, 0, 0, 0]))
    rep = validate_lorentzian(M, [np.zeros(4)])
    assert not rep.ok and "orientation" in rep.violations[0][2]


def test_custom_orientation_flips_future():
    M = MetricModel(dim=3, evaluator=lambda x: np.diag([1.0, 1, 1, -1]),
                    orientation=lambda x: np.array([0, 0, 0, -1.0]))
    assert classify(M, np.zeros(4), np.array([0, 0, 0, 1.0])).time_sense is TimeSense.PAST
