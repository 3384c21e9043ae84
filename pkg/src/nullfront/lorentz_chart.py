"""Lorentzian metrics on a single coordinate chart of R^{m+1}.

Coordinates are ordered ``(x0, ..., x{m-1}, t)``: the time coordinate is last.
A vector ``v`` is future pointing when ``g(v, T) < 0`` for the reference
timelike field ``T`` of the model (default ``e_t``).
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_FD_STEP = 1e-5
DEFAULT_NULL_TOL = 1e-9


class ChartError(ValueError):
    """Dimension mismatch or non-finite data on the chart."""


class SingularMetricError(ChartError):
    pass


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float))
        if self.base.shape != self.components.shape:
            raise ChartError("tangent vector and base point have different lengths")


@dataclass(frozen=True)
class CovectorValue:
    base: np.ndarray
    components: np.ndarray

    def __call__(self, v) -> float:
        return float(np.dot(self.components, _components(v, self.base)))


class Kind(str, enum.Enum):
    SPACELIKE = "spacelike"
    NULL = "null"
    TIMELIKE = "timelike"
    ZERO = "zero"


class TimeSense(str, enum.Enum):
    FUTURE = "future"
    PAST = "past"
    NONE = "none"


@dataclass(frozen=True)
class CausalClass:
    kind: Kind
    time_sense: TimeSense


def _time_basis(dim: int) -> np.ndarray:
    e = np.zeros(dim + 1)
    e[-1] = 1.0
    return e


@dataclass(frozen=True)
class MetricModel:
    """Metric ``g_ij(x)`` with a time orientation.

    ``evaluator`` maps a point of shape ``(m+1,)`` to an ``(m+1, m+1)`` matrix.
    ``batch_evaluator`` (optional) maps ``(n, m+1)`` points to ``(n, m+1, m+1)``.
    ``derivative`` (optional) returns ``dG[k, i, j] = d g_ij / d x^k``; if
    ``batch_derivative`` is also given it is used for batches.
    """

    dim: int
    evaluator: ArrayFn
    orientation: Optional[ArrayFn] = None
    fd_step: float = DEFAULT_FD_STEP
    derivative: Optional[ArrayFn] = None
    batch_evaluator: Optional[ArrayFn] = None
    batch_derivative: Optional[ArrayFn] = None
    flat: bool = False
    name: str = "custom"

    def __post_init__(self):
        if self.dim < 1:
            raise ChartError("metric dimension m must be >= 1")
        if not self.fd_step > 0:
            raise ChartError("fd_step must be positive")

    @property
    def n(self) -> int:
        return self.dim + 1

    def time_field(self, x: np.ndarray) -> np.ndarray:
        if self.orientation is None:
            return _time_basis(self.dim)
        return np.asarray(self.orientation(x), dtype=float)

    def time_field_batch(self, xs: np.ndarray) -> np.ndarray:
        if self.orientation is None:
            return np.broadcast_to(_time_basis(self.dim), xs.shape).copy()
        return np.array([self.orientation(x) for x in xs], dtype=float).reshape(xs.shape)


def _point(model: MetricModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ChartError(f"expected a point with {model.n} coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ChartError("point has non-finite coordinates")
    return x


def _components(v, base: Optional[np.ndarray] = None) -> np.ndarray:
    if isinstance(v, TangentVector):
        if base is not None and not np.array_equal(v.base, base):
            raise ChartError("tangent vector is based at a different point")
        return v.components
    return np.asarray(v, dtype=float)


def metric_at(model: MetricModel, x) -> np.ndarray:
    x = _point(model, x)
    G = np.asarray(model.evaluator(x), dtype=float)
    if G.shape != (model.n, model.n):
        raise ChartError(f"metric evaluator returned shape {G.shape}, expected {(model.n, model.n)}")
    if not np.all(np.isfinite(G)):
        raise ChartError(f"metric evaluator returned non-finite entries at {x}")
    return 0.5 * (G + G.T)


def metric_batch(model: MetricModel, xs: np.ndarray) -> np.ndarray:
    """Symmetrized metric at each row of ``xs`` (shape ``(n, m+1)``)."""
    xs = np.asarray(xs, dtype=float)
    if model.batch_evaluator is not None:
        G = np.asarray(model.batch_evaluator(xs), dtype=float)
    else:
        G = np.array([model.evaluator(x) for x in xs], dtype=float).reshape(xs.shape + (model.n,))
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def inner(model: MetricModel, x, u, v) -> float:
    x = _point(model, x)
    uc = _components(u, x)
    vc = _components(v, x)
    return float(uc @ metric_at(model, x) @ vc)


def classify(model: MetricModel, x, v, null_tol: float = DEFAULT_NULL_TOL) -> CausalClass:
    if null_tol < 0:
        raise ChartError("null_tol must be non-negative")
    x = _point(model, x)
    vc = _components(v, x)
    norm2 = float(vc @ vc)
    if norm2 == 0.0:
        return CausalClass(Kind.ZERO, TimeSense.NONE)
    G = metric_at(model, x)
    q = float(vc @ G @ vc)
    if abs(q) <= null_tol * norm2:
        kind = Kind.NULL
    elif q < 0:
        kind = Kind.TIMELIKE
    else:
        return CausalClass(Kind.SPACELIKE, TimeSense.NONE)
    s = float(vc @ G @ model.time_field(x))
    if s < 0:
        sense = TimeSense.FUTURE
    elif s > 0:
        sense = TimeSense.PAST
    else:
        sense = TimeSense.NONE
    return CausalClass(kind, sense)


def metric_derivative(model: MetricModel, x) -> np.ndarray:
    """``dG[k, i, j] = d g_ij / d x^k`` (analytic if available, else central differences)."""
    x = _point(model, x)
    if model.flat:
        return np.zeros((model.n,) * 3)
    if model.derivative is not None:
        dG = np.asarray(model.derivative(x), dtype=float)
        return 0.5 * (dG + np.swapaxes(dG, 1, 2))
    h = model.fd_step
    dG = np.empty((model.n,) * 3)
    for k in range(model.n):
        e = np.zeros(model.n)
        e[k] = h
        dG[k] = (metric_at(model, x + e) - metric_at(model, x - e)) / (2 * h)
    return dG


def metric_derivative_batch(model: MetricModel, xs: np.ndarray) -> np.ndarray:
    """Batched form of :func:`metric_derivative`, shape ``(n, m+1, m+1, m+1)``."""
    xs = np.asarray(xs, dtype=float)
    npts, d = xs.shape
    if model.flat:
        return np.zeros((npts, d, d, d))
    if model.batch_derivative is not None:
        dG = np.asarray(model.batch_derivative(xs), dtype=float)
        return 0.5 * (dG + np.swapaxes(dG, -1, -2))
    if model.derivative is not None:
        return np.array([metric_derivative(model, x) for x in xs])
    h = model.fd_step
    dG = np.empty((npts, d, d, d))
    for k in range(d):
        shift = np.zeros(d)
        shift[k] = h
        dG[:, k] = (metric_batch(model, xs + shift) - metric_batch(model, xs - shift)) / (2 * h)
    return dG


def _christoffel_from(G: np.ndarray, dG: np.ndarray) -> np.ndarray:
    # lowered[..., l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    a = np.einsum("...ijl->...lij", dG)
    b = np.einsum("...jil->...lij", dG)
    lowered = a + b - dG
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise SingularMetricError("metric matrix is singular") from exc
    Gam = 0.5 * np.einsum("...kl,...lij->...kij", Ginv, lowered)
    return 0.5 * (Gam + np.swapaxes(Gam, -1, -2))


def christoffel(model: MetricModel, x) -> np.ndarray:
    """Christoffel symbols ``Gamma[k, i, j]`` of the Levi-Civita connection at ``x``."""
    x = _point(model, x)
    if model.flat:
        return np.zeros((model.n,) * 3)
    G = metric_at(model, x)
    _check_invertible(G)
    return _christoffel_from(G, metric_derivative(model, x))


def christoffel_batch(model: MetricModel, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if model.flat:
        return np.zeros((xs.shape[0],) + (model.n,) * 3)
    G = metric_batch(model, xs)
    _check_invertible(G)
    return _christoffel_from(G, metric_derivative_batch(model, xs))


def _check_invertible(G: np.ndarray, rtol: float = 1e-13) -> None:
    s = np.linalg.svd(G, compute_uv=False)
    smax = s[..., 0]
    smin = s[..., -1]
    if np.any(~np.isfinite(s)) or np.any(smin <= rtol * smax):
        raise SingularMetricError("metric matrix is singular or non-finite")


@dataclass
class LorentzReport:
    """Result of :func:`validate_lorentzian`.

    ``violations`` holds ``(index, point, reason)`` tuples; ``warnings`` holds
    convention notes that do not make the model invalid.
    """

    n_points: int
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_lorentzian(model: MetricModel, points: Sequence) -> LorentzReport:
    report = LorentzReport(n_points=len(points))
    e_t = _time_basis(model.dim)
    for idx, p in enumerate(points):
        try:
            x = _point(model, p)
            G = metric_at(model, x)
        except ChartError as exc:
            report.violations.append((idx, np.asarray(p, dtype=float), f"evaluation: {exc}"))
            continue
        eig = np.linalg.eigvalsh(G)
        n_neg = int(np.sum(eig < 0))
        if n_neg != 1 or np.any(eig == 0):
            report.violations.append((idx, x, f"signature: {n_neg} negative eigenvalues"))
            continue
        T = model.time_field(x)
        gTT = float(T @ G @ T)
        if not gTT < 0:
            report.violations.append((idx, x, f"orientation: g(T,T) = {gTT!r} is not negative"))
            continue
        # e_t only serves as a reference direction where it is itself timelike
        if float(e_t @ G @ e_t) < 0 and float(T @ G @ e_t) > 0:
            report.warnings.append((idx, x, "orientation field is past directed relative to e_t"))
    if report.warnings:
        warnings.warn(f"{len(report.warnings)} points have a past-directed orientation field",
                      stacklevel=2)
    return report


def minkowski(m: int) -> MetricModel:
    """Flat metric ``dx0^2 + ... + dx{m-1}^2 - dt^2``."""
    eta = np.diag([1.0] * m + [-1.0])

    def ev(x):
        return eta.copy()

    def batch(xs):
        return np.broadcast_to(eta, xs.shape[:-1] + eta.shape).copy()

    return MetricModel(dim=m, evaluator=ev, batch_evaluator=batch, flat=True,
                       name=f"minkowski({m})")
