"""Null congruences launched from Legendrian data on a spacelike hypersurface.

Each L-sample ``l`` gets the future null vector ``N_l = mu_*(X_l) + V`` and
the null geodesic ``gamma_l`` through ``mu(lam(l))``. The congruence is the
map ``nu(l, t) = gamma_l(t)`` sampled on a shared time grid.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geodesic import IntegratorConfig, Trajectory, _rhs_batch, integrate_batch
from .grids import LGrid, grid_diff, numeric_rank
from .hypersurface import DEFAULT_RANK_TOL, Immersion, normal_batch
from .legendrian import LegendrianMap
from .lorentz_chart import (CovectorValue, MetricModel, TangentVector, TimeSense, classify,
                            metric_at, metric_batch)

NULL_CHECK_TOL = 1e-10


class FrontError(ValueError):
    pass


@dataclass(frozen=True)
class NullCongruence:
    """Sampled congruence ``nu`` and its null velocity field ``N``.

    ``nu`` and ``N`` have shape ``grid.shape + (K+1, n)``; ``covered`` marks
    the samples whose time lies inside that ray's integrated range.
    Uncovered entries are NaN.
    """

    model: MetricModel
    grid: LGrid
    times: np.ndarray
    nu: np.ndarray
    N: np.ndarray
    covered: np.ndarray
    mu: Optional[Immersion] = None
    lm: Optional[LegendrianMap] = None
    trajectories: Optional[tuple] = None
    terminations: Optional[tuple] = None

    @property
    def n(self) -> int:
        return self.model.n

    @classmethod
    def from_samples(cls, model: MetricModel, grid: LGrid, times, nu, N) -> "NullCongruence":
        """Congruence given directly by samples (no trajectories attached)."""
        times = np.asarray(times, dtype=float)
        nu = np.asarray(nu, dtype=float)
        N = np.asarray(N, dtype=float)
        shape = grid.shape + (len(times), model.n)
        if nu.shape != shape or N.shape != shape:
            raise FrontError(f"samples must have shape {shape}")
        covered = np.all(np.isfinite(nu), axis=-1) & np.all(np.isfinite(N), axis=-1)
        return cls(model=model, grid=grid, times=times, nu=nu, N=N, covered=covered)

    def trajectory(self, l) -> Trajectory:
        if self.trajectories is None:
            raise FrontError("congruence was built from samples and stores no trajectories")
        return self.trajectories[int(np.ravel_multi_index(tuple(l), self.grid.shape))]


def initial_null_fields(model: MetricModel, mu: Immersion, lm: LegendrianMap) -> tuple:
    """Base points ``mu(lam)`` and null vectors ``N = J X + V`` for every sample (flattened)."""
    lam = lm.flat_lam()
    X = lm.flat_X()
    x0 = mu.point(lam)
    J = mu.jac(lam)
    V = normal_batch(model, mu, lam)
    N = np.einsum("pai,pi->pa", J, X) + V
    G = metric_batch(model, x0)
    q = np.einsum("pa,pab,pb->p", N, G, N)
    nn = np.einsum("pa,pa->p", N, N)
    bad = np.abs(q) > NULL_CHECK_TOL * nn
    if np.any(bad):
        i = int(np.argmax(bad))
        raise FrontError(f"initial field is not null at sample {i}: g(N,N) = {q[i]!r}")
    T = model.time_field_batch(x0)
    s = np.einsum("pa,pab,pb->p", N, G, T)
    if np.any(~(s < 0)):
        i = int(np.argmax(~(s < 0)))
        raise FrontError(f"initial field is not future pointing at sample {i}")
    return x0, N


def initial_null_field(model: MetricModel, mu: Immersion, lm: LegendrianMap, l) -> TangentVector:
    lam = lm.lam[tuple(l)]
    X = lm.X[tuple(l)]
    x = mu.point(lam)
    V = normal_batch(model, mu, lam[None, :])[0]
    N = mu.jac(lam) @ X + V
    G = metric_at(model, x)
    q = N @ G @ N
    if abs(q) > NULL_CHECK_TOL * (N @ N):
        raise FrontError(f"initial field is not null: g(N,N) = {q!r}")
    cc = classify(model, x, N)
    if cc.time_sense is not TimeSense.FUTURE:
        raise FrontError("initial field is not future pointing")
    return TangentVector(x, N)


def build_front(model: MetricModel, mu: Immersion, lm: LegendrianMap, window: Sequence,
                cfg: Optional[IntegratorConfig] = None) -> NullCongruence:
    """Propagate the congruence over ``window = (t_min, t_max, steps)``.

    Integration failures are recorded per ray (``terminations``) and the
    affected samples are left uncovered.
    """
    t_min, t_max, steps = float(window[0]), float(window[1]), int(window[2])
    if not t_min < t_max or steps < 1:
        raise FrontError("window needs t_min < t_max and steps >= 1")
    times = np.linspace(t_min, t_max, steps + 1)
    x0, N0 = initial_null_fields(model, mu, lm)
    trajs = integrate_batch(model, x0, N0, (min(t_min, 0.0), max(t_max, 0.0)), cfg)
    n = model.n
    nu = np.full((len(trajs), len(times), n), np.nan)
    N = np.full_like(nu, np.nan)
    covered = np.zeros((len(trajs), len(times)), dtype=bool)
    for r, tr in enumerate(trajs):
        c = tr.covers(times)
        covered[r] = c
        if np.any(c):
            nu[r, c], N[r, c] = tr.sample_many(times[c])
    shape = lm.grid.shape
    return NullCongruence(
        model=model, grid=lm.grid, times=times,
        nu=nu.reshape(shape + (len(times), n)), N=N.reshape(shape + (len(times), n)),
        covered=covered.reshape(shape + (len(times),)), mu=mu, lm=lm,
        trajectories=tuple(trajs),
        terminations=tuple((tr.termination_backward, tr.termination_forward) for tr in trajs))


@dataclass
class FrontResidualReport:
    orth: np.ndarray
    null: np.ndarray
    tangency: np.ndarray
    mask: np.ndarray

    def _stats(self, a):
        v = a[self.mask]
        if v.size == 0:
            return 0.0, 0.0
        return float(np.max(v)), float(np.sqrt(np.mean(v ** 2)))

    @property
    def orth_max(self) -> float:
        return self._stats(self.orth)[0]

    @property
    def orth_rms(self) -> float:
        return self._stats(self.orth)[1]

    @property
    def null_max(self) -> float:
        return self._stats(self.null)[0]

    @property
    def null_rms(self) -> float:
        return self._stats(self.null)[1]

    @property
    def tangency_max(self) -> float:
        return self._stats(self.tangency)[0]

    @property
    def tangency_rms(self) -> float:
        return self._stats(self.tangency)[1]


def _ratio(num, den):
    out = np.zeros_like(num)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def _l_axes_covered(nc: NullCongruence) -> np.ndarray:
    """Samples whose L-stencil neighbours are covered as well."""
    ok = nc.covered & nc.grid.interior_mask()[..., None]
    for ax in range(nc.grid.ndim):
        c = nc.covered
        if nc.grid.periodic[ax]:
            ok &= np.roll(c, 1, axis=ax) & np.roll(c, -1, axis=ax)
        else:
            pad = np.zeros_like(c)
            sl_lo = [slice(None)] * c.ndim
            sl_hi = [slice(None)] * c.ndim
            sl_lo[ax] = slice(1, None)
            sl_hi[ax] = slice(None, -1)
            shifted = pad.copy()
            shifted[tuple(sl_hi)] = c[tuple(sl_lo)]
            ok &= shifted
            shifted = pad.copy()
            shifted[tuple(sl_lo)] = c[tuple(sl_hi)]
            ok &= shifted
    return ok


def mapped_null_residual(nc: NullCongruence) -> FrontResidualReport:
    """Orthogonality, nullity and tangency residuals at interior samples.

    ``orth`` is ``max_i |g(N, D_i nu)| / (|N| |D_i nu|)`` (0 where a tangent
    vanishes), ``null`` is ``|g(N,N)|/|N|^2`` and ``tangency`` is
    ``|D_t nu - N| / |N|`` with time differences on the shared grid.
    """
    n = nc.n
    shape = nc.nu.shape[:-1]
    nu = np.where(nc.covered[..., None], nc.nu, 0.0)
    N = np.where(nc.covered[..., None], nc.N, 0.0)
    G = np.zeros(shape + (n, n))
    G[nc.covered] = metric_batch(nc.model, nu[nc.covered])
    gN = np.einsum("...ab,...b->...a", G, N)
    nN = np.linalg.norm(N, axis=-1)
    orth = np.zeros(shape)
    for ax in range(nc.grid.ndim):
        D = grid_diff(nu, nc.grid, ax)
        r = _ratio(np.abs(np.einsum("...a,...a->...", gN, D)), nN * np.linalg.norm(D, axis=-1))
        orth = np.maximum(orth, r)
    null = _ratio(np.abs(np.einsum("...a,...a->...", gN, N)), nN ** 2)
    tang = np.zeros(shape)
    if len(nc.times) >= 3:
        Dt = np.gradient(nu, nc.times, axis=nc.grid.ndim, edge_order=2)
        tang = _ratio(np.linalg.norm(Dt - N, axis=-1), nN)
    mask = _l_axes_covered(nc)
    tmask = mask.copy()
    tax = nc.grid.ndim
    c = nc.covered
    both = np.zeros_like(c)
    idx = [slice(None)] * c.ndim
    idx[tax] = slice(1, -1)
    lo = [slice(None)] * c.ndim
    lo[tax] = slice(None, -2)
    hi = [slice(None)] * c.ndim
    hi[tax] = slice(2, None)
    both[tuple(idx)] = c[tuple(lo)] & c[tuple(hi)]
    tang = np.where(tmask & both, tang, 0.0)
    return FrontResidualReport(orth=orth, null=null, tangency=tang, mask=mask)


def lift(nc: NullCongruence, l, t: float) -> tuple:
    """``(point, unit direction of N, covector G N)`` at L-index ``l`` and time ``t``.

    With stored trajectories ``t`` may be any covered parameter; otherwise it
    must be one of the shared grid times.
    """
    l = tuple(l)
    if nc.trajectories is not None:
        s = nc.trajectory(l).sample(float(t))
        x, N = s.x, s.v
    else:
        k = np.flatnonzero(nc.times == t)
        if k.size == 0 or not nc.covered[l + (int(k[0]),)]:
            raise FrontError(f"t = {t!r} is not a covered grid time")
        x, N = nc.nu[l + (int(k[0]),)], nc.N[l + (int(k[0]),)]
    direction = N / np.linalg.norm(N)
    theta = CovectorValue(x, metric_at(nc.model, x) @ N)
    return x, direction, theta


def _direction_rows(V, D):
    nrm = np.linalg.norm(V, axis=-1, keepdims=True)
    d = V / nrm
    return (D - d * np.sum(d * D, axis=-1, keepdims=True)) / nrm


def lift_differentials(nc: NullCongruence) -> np.ndarray:
    """FD differential of ``(nu, N/|N|)`` at every sample, shape ``(..., 2n, m)``.

    The first column is the time derivative (``N`` and the geodesic
    acceleration), the rest are L-grid differences.
    """
    n = nc.n
    shape = nc.nu.shape[:-1]
    nu = np.where(nc.covered[..., None], nc.nu, 0.0)
    N = np.where(nc.covered[..., None], nc.N, 1.0)
    acc = np.zeros(shape + (n,))
    y = np.concatenate([nu, N], axis=-1)[nc.covered]
    if y.size:
        acc[nc.covered] = _rhs_batch(nc.model, y)[:, n:]
    cols = [np.concatenate([N, _direction_rows(N, acc)], axis=-1)]
    for ax in range(nc.grid.ndim):
        Dnu = grid_diff(nu, nc.grid, ax)
        DN = grid_diff(N, nc.grid, ax)
        cols.append(np.concatenate([Dnu, _direction_rows(N, DN)], axis=-1))
    return np.stack(cols, axis=-1)


def lift_ranks(nc: NullCongruence, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Numeric rank of the lift differential per sample; -1 where not evaluable."""
    D = lift_differentials(nc)
    r = numeric_rank(D, rank_tol)
    return np.where(_l_axes_covered(nc), r, -1)


def lift_rank(nc: NullCongruence, l, k: int, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Rank at L-index ``l`` and time index ``k``."""
    return int(lift_ranks(nc, rank_tol)[tuple(l) + (int(k),)])


def fmt(x: float) -> str:
    """Shortest round-trip decimal."""
    return repr(float(x))


def front_csv(nc: NullCongruence) -> str:
    k = nc.grid.ndim
    n = nc.n
    header = ([f"l_{i}" for i in range(k)] + ["t"] + [f"nu_{i}" for i in range(n)]
              + [f"N_{i}" for i in range(n)])
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    pts = nc.grid.points()
    for idx in nc.grid.indices():
        lp = pts[idx] if k else ()
        for j, t in enumerate(nc.times):
            if not nc.covered[idx + (j,)]:
                continue
            row = [fmt(v) for v in lp] + [fmt(t)] + [fmt(v) for v in nc.nu[idx + (j,)]] + \
                  [fmt(v) for v in nc.N[idx + (j,)]]
            out.write(",".join(row) + "\n")
    return out.getvalue()
