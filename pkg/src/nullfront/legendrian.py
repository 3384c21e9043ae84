"""Legendrian maps into the unit (co)tangent bundle of a spacelike hypersurface.

A map into ST*M is stored as the pair ``(lam, X)``: base points ``lam(l)`` in
the hypersurface's parameter domain and an induced-metric unit vector field
``X(l)`` along them. The map is Legendrian when ``X`` is orthogonal to every
tangent of ``lam``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grids import LGrid, grid_diff, numeric_rank, unit_directions
from .hypersurface import DEFAULT_RANK_TOL, Immersion, induced_metric_batch
from .lorentz_chart import MetricModel

class LegendrianError(ValueError):
    pass


class NonOrientableError(LegendrianError):
    pass


@dataclass(frozen=True)
class LegendrianMap:
    """Sampled pair ``(lam, X)`` on ``grid``.

    ``lam`` has shape ``grid.shape + (m,)`` (hypersurface parameters) and ``X``
    the same shape, normalized so that ``gbar(X, X) = 1``. ``gbar`` caches the
    induced metric at ``lam``.
    """

    grid: LGrid
    lam: np.ndarray
    X: np.ndarray
    host: Immersion
    gbar: np.ndarray
    lam_fn: Optional[Callable] = None
    X_fn: Optional[Callable] = None

    @property
    def m(self) -> int:
        return self.host.dim

    def flat_lam(self) -> np.ndarray:
        return self.lam.reshape(-1, self.m)

    def flat_X(self) -> np.ndarray:
        return self.X.reshape(-1, self.m)


def _gdot(gbar, a, b):
    return np.einsum("...i,...ij,...j->...", a, gbar, b)


def make_legendrian(model: MetricModel, host: Immersion, grid: LGrid, lam, X) -> LegendrianMap:
    """Build a map from base samples (or a callable on L-parameters) and any
    nonzero field ``X``; ``X`` is rescaled to induced-metric unit length."""
    pts = grid.points()
    m = host.dim
    lam_v = np.asarray(lam(pts) if callable(lam) else lam, dtype=float)
    X_v = np.asarray(X(pts) if callable(X) else X, dtype=float)
    shape = grid.shape + (m,)
    lam_v = np.broadcast_to(lam_v, shape).copy()
    X_v = np.broadcast_to(X_v, shape).copy()
    gbar = induced_metric_batch(model, host, lam_v.reshape(-1, m)).reshape(grid.shape + (m, m))
    n2 = _gdot(gbar, X_v, X_v)
    if np.any(~(n2 > 0)):
        raise LegendrianError("X vanishes (or the induced metric is not positive) at some sample")
    X_v = X_v / np.sqrt(n2)[..., None]
    return LegendrianMap(grid=grid, lam=lam_v, X=X_v, host=host, gbar=gbar,
                         lam_fn=lam if callable(lam) else None, X_fn=X if callable(X) else None)


def legendrian_residuals(lm: LegendrianMap) -> np.ndarray:
    """``max_i |gbar(X, D_i lam)|`` at every grid sample (one-sided at edges)."""
    if lm.grid.ndim == 0:
        return np.zeros(lm.grid.shape)
    res = np.zeros(lm.grid.shape)
    for ax in range(lm.grid.ndim):
        D = grid_diff(lm.lam, lm.grid, ax)
        res = np.maximum(res, np.abs(_gdot(lm.gbar, lm.X, D)))
    return res


def legendrian_residual(model: MetricModel, lm: LegendrianMap, l) -> float:
    """Residual at grid multi-index ``l``."""
    return float(legendrian_residuals(lm)[tuple(l)])


def _align_signs(grid: LGrid, X: np.ndarray, gbar: np.ndarray) -> np.ndarray:
    """Greedy sign propagation from the first grid point; raises on conflicts."""
    sign = np.zeros(grid.shape, dtype=int)
    seed = (0,) * grid.ndim
    sign[seed] = 1
    queue = deque([seed])
    while queue:
        idx = queue.popleft()
        for nb in grid.neighbors(idx):
            if sign[nb] == 0:
                d = _gdot(gbar[idx], X[idx], X[nb])
                sign[nb] = sign[idx] if d >= 0 else -sign[idx]
                queue.append(nb)
    out = X * sign[..., None]
    for idx in grid.indices():
        for nb in grid.neighbors(idx):
            if _gdot(gbar[idx], out[idx], out[nb]) < 0:
                raise NonOrientableError(
                    f"normal field changes sign between grid points {idx} and {nb}; "
                    "normal bundle is not orientable on this grid")
    return out


def normal_lifts(model: MetricModel, host: Immersion, grid: LGrid,
                 lam: Callable[[np.ndarray], np.ndarray], step: float = 1e-6,
                 rank_tol: float = DEFAULT_RANK_TOL, hint=None) -> tuple:
    """The two unit normal fields of the immersed submanifold ``lam``.

    Tangents of ``lam`` are taken with central differences of width ``step``
    (independent of the grid spacing). ``hint`` (an M-parameter vector)
    orients the first output at the seed point.
    """
    pts = grid.points()
    m = host.dim
    k = grid.ndim
    lam_v = np.asarray(lam(pts), dtype=float)
    gbar = induced_metric_batch(model, host, lam_v.reshape(-1, m)).reshape(grid.shape + (m, m))
    tangents = []
    for i in range(k):
        e = np.zeros(k)
        e[i] = step
        tangents.append((np.asarray(lam(pts + e)) - np.asarray(lam(pts - e))) / (2 * step))
    if k == 0:
        raise LegendrianError("normal lifts need a submanifold of positive dimension")
    Tm = np.stack(tangents, axis=-2)                        # (..., k, m)
    A = np.einsum("...ki,...ij->...kj", Tm, gbar)          # covectors gbar(D_i lam, .)
    u, s, vh = np.linalg.svd(A)
    if np.any(s[..., -1] < rank_tol * np.maximum(s[..., 0], 1e-300)) or np.any(s[..., 0] == 0):
        bad = np.argwhere(s[..., -1] < rank_tol * s[..., 0])
        where = tuple(bad[0]) if len(bad) else "?"
        raise LegendrianError(f"lam is not an immersion at grid point {where}")
    X = vh[..., -1, :]
    X = X / np.sqrt(_gdot(gbar, X, X))[..., None]
    X = _align_signs(grid, X, gbar)
    if hint is not None:
        seed = (0,) * k
        if _gdot(gbar[seed], X[seed], np.asarray(hint, dtype=float)) < 0:
            X = -X
    plus = LegendrianMap(grid=grid, lam=lam_v, X=X, host=host, gbar=gbar, lam_fn=lam)
    minus = LegendrianMap(grid=grid, lam=lam_v, X=-X, host=host, gbar=gbar, lam_fn=lam)
    return plus, minus


def fiber_legendrian(model: MetricModel, host: Immersion, xbar, grid: LGrid) -> LegendrianMap:
    """Constant base point ``xbar``; ``X`` sweeps the unit sphere of the fiber."""
    xbar = np.asarray(xbar, dtype=float)
    u = unit_directions(grid)
    if u.shape[-1] != host.dim:
        raise LegendrianError(f"grid directions have {u.shape[-1]} components, host has dim {host.dim}")
    lam = np.broadcast_to(xbar, grid.shape + (host.dim,))
    return make_legendrian(model, host, grid, lam, u)


def _direction_rows(V: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Derivative of ``V/|V|`` given ``D = dV``, projected orthogonal to ``V``."""
    nrm = np.linalg.norm(V, axis=-1, keepdims=True)
    d = V / nrm
    return (D - d * np.sum(d * D, axis=-1, keepdims=True)) / nrm


def legendrian_differentials(lm: LegendrianMap) -> np.ndarray:
    """Stacked FD differential of ``(lam, direction(X))``, shape ``grid.shape + (2m, k)``."""
    cols = []
    for ax in range(lm.grid.ndim):
        Dl = grid_diff(lm.lam, lm.grid, ax)
        DX = _direction_rows(lm.X, grid_diff(lm.X, lm.grid, ax))
        cols.append(np.concatenate([Dl, DX], axis=-1))
    if not cols:
        return np.zeros(lm.grid.shape + (2 * lm.m, 0))
    return np.stack(cols, axis=-1)


def legendrian_rank(model: MetricModel, lm: LegendrianMap, l, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    D = legendrian_differentials(lm)[tuple(l)]
    if D.size == 0:
        return 0
    return int(numeric_rank(D, rank_tol))


def legendrian_ranks(lm: LegendrianMap, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    D = legendrian_differentials(lm)
    if D.shape[-1] == 0:
        return np.zeros(lm.grid.shape, dtype=int)
    return numeric_rank(D, rank_tol)
