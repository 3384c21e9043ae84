"""Immersed spacelike hypersurfaces, induced metrics and unit normals."""
from __future__ import annotations

import warnings
from functools import cached_property
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import metric_dsl as dsl
from .lorentz_chart import (Kind, MetricModel, TangentVector, TimeSense,
                            classify, metric_at, metric_batch)

DEFAULT_JAC_STEP = 1e-5
DEFAULT_RANK_TOL = 1e-8
DEFAULT_PD_TOL = 1e-8


class HypersurfaceError(ValueError):
    pass


class RankDeficientWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Immersion:
    """A map from parameters in R^m to chart points in R^{m+1}.

    ``map`` and ``jacobian`` act on arrays with a trailing parameter axis, so
    both single points and batches work. ``periodic`` lists parameter axes
    with their periods (informational, used by grids).
    """

    dim: int
    map: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jac_fd_step: float = DEFAULT_JAC_STEP
    bounds: Optional[Sequence[tuple]] = None
    periodic: Mapping[int, float] = field(default_factory=dict)

    def point(self, p) -> np.ndarray:
        return np.asarray(self.map(np.asarray(p, dtype=float)), dtype=float)

    def jac(self, p) -> np.ndarray:
        """``(..., m+1, m)`` Jacobian; central differences if none was supplied."""
        p = np.asarray(p, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(p), dtype=float)
        h = self.jac_fd_step
        cols = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            cols.append((self.point(p + e) - self.point(p - e)) / (2 * h))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class GraphSlice:
    """The graph ``t = f(x0, ..., x{m-1})`` of a DSL expression."""

    f: Union[str, dsl.Expr]
    dim: int
    params: Mapping[str, float] = field(default_factory=dict)
    fd_step: float = DEFAULT_JAC_STEP

    @cached_property
    def expr(self) -> dsl.Expr:
        if isinstance(self.f, str):
            return dsl.parse_expr(self.f, variables=[f"x{i}" for i in range(self.dim)],
                                  params=self.params)
        return self.f

    @property
    def text(self) -> str:
        return self.f if isinstance(self.f, str) else dsl.to_text(self.f)

    def height(self, spatial) -> np.ndarray:
        spatial = np.asarray(spatial, dtype=float)
        env = dict(self.params)
        for i in range(self.dim):
            env[f"x{i}"] = spatial[..., i]
        return np.broadcast_to(dsl.eval_array(self.expr, env), spatial.shape[:-1]).copy()

    def gradient(self, spatial) -> np.ndarray:
        spatial = np.asarray(spatial, dtype=float)
        h = self.fd_step
        out = np.empty(spatial.shape)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out[..., i] = (self.height(spatial + e) - self.height(spatial - e)) / (2 * h)
        return out


def slice_as_immersion(sl: GraphSlice) -> Immersion:
    m = sl.dim
    sl.expr  # parse eagerly so that bad expressions fail here

    def fmap(p):
        p = np.asarray(p, dtype=float)
        return np.concatenate([p, sl.height(p)[..., None]], axis=-1)

    def fjac(p):
        p = np.asarray(p, dtype=float)
        J = np.zeros(p.shape[:-1] + (m + 1, m))
        J[..., np.arange(m), np.arange(m)] = 1.0
        J[..., m, :] = sl.gradient(p)
        return J

    return Immersion(dim=m, map=fmap, jacobian=fjac, jac_fd_step=sl.fd_step)


def _min_singular(J):
    return np.linalg.svd(J, compute_uv=False)[..., -1]


def induced_metric(model: MetricModel, imm: Immersion, p, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    J = imm.jac(p)
    if np.any(_min_singular(J) < rank_tol):
        warnings.warn(f"immersion Jacobian is rank deficient near {p.tolist()}", RankDeficientWarning,
                      stacklevel=2)
    G = metric_at(model, imm.point(p))
    gb = J.T @ G @ J
    return 0.5 * (gb + gb.T)


def induced_metric_batch(model: MetricModel, imm: Immersion, ps: np.ndarray) -> np.ndarray:
    ps = np.asarray(ps, dtype=float)
    J = imm.jac(ps)
    G = metric_batch(model, imm.point(ps))
    gb = np.einsum("pai,pab,pbj->pij", J, G, J)
    return 0.5 * (gb + np.swapaxes(gb, -1, -2))


@dataclass
class SpacelikeReport:
    min_eigenvalues: np.ndarray
    pd_tol: float
    rank_deficient: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.min_eigenvalues >= self.pd_tol))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.min(self.min_eigenvalues))


def spacelike_check(model: MetricModel, imm: Immersion, grid, pd_tol: float = DEFAULT_PD_TOL,
                    rank_tol: float = DEFAULT_RANK_TOL) -> SpacelikeReport:
    ps = np.asarray(grid, dtype=float).reshape(-1, imm.dim)
    gb = induced_metric_batch(model, imm, ps)
    eig = np.linalg.eigvalsh(gb)[:, 0]
    rank_def = _min_singular(imm.jac(ps)) < rank_tol
    return SpacelikeReport(min_eigenvalues=eig, pd_tol=pd_tol, rank_deficient=rank_def)


def normal_batch(model: MetricModel, imm: Immersion, ps: np.ndarray) -> np.ndarray:
    """Unit future normals at each row of ``ps``; raises if any point is not spacelike."""
    ps = np.asarray(ps, dtype=float).reshape(-1, imm.dim)
    X = imm.point(ps)
    J = imm.jac(ps)
    G = metric_batch(model, X)
    A = np.einsum("pai,pab->pib", J, G)   # rows: covectors g(J e_i, .)
    _, _, vh = np.linalg.svd(A)
    w = vh[:, -1, :]
    gww = np.einsum("pa,pab,pb->p", w, G, w)
    if np.any(~(gww < 0)):
        bad = int(np.argmax(~(gww < 0)))
        raise HypersurfaceError(f"no timelike normal at parameters {ps[bad].tolist()} "
                                "(immersion is not spacelike there)")
    V = w / np.sqrt(-gww)[:, None]
    T = model.time_field_batch(X)
    s = np.einsum("pa,pab,pb->p", V, G, T)
    V = np.where((s > 0)[:, None], -V, V)
    return V


def unit_future_normal(model: MetricModel, imm: Immersion, p) -> TangentVector:
    p = np.asarray(p, dtype=float)
    V = normal_batch(model, imm, p[None, :])[0]
    x = imm.point(p)
    cc = classify(model, x, V)
    if cc.kind is not Kind.TIMELIKE or cc.time_sense is not TimeSense.FUTURE:
        raise HypersurfaceError(f"normal at {p.tolist()} is {cc.kind.value}/{cc.time_sense.value}")
    return TangentVector(x, V)


def reparameterize(imm: Immersion, phi: Callable, phi_jac: Callable) -> Immersion:
    """Compose ``imm`` with a parameter diffeomorphism ``phi`` (``phi_jac`` its Jacobian)."""

    def fmap(q):
        return imm.point(phi(np.asarray(q, dtype=float)))

    def fjac(q):
        q = np.asarray(q, dtype=float)
        return imm.jac(phi(q)) @ phi_jac(q)

    return Immersion(dim=imm.dim, map=fmap, jacobian=fjac, jac_fd_step=imm.jac_fd_step)
