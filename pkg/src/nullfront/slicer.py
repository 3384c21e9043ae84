"""Intersecting a null congruence with a spacelike graph ``t = f(x)``.

For each ray the crossings are the roots of ``F(t) = x_t(t) - f(x_s(t))``
along the dense output. At a crossing the covector
``phi_i = g(N, mu_* e_i)`` on the slice parameters is the sliced Legendrian
data; the first crossing of every ray forms the sheet used for differences.
"""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .front import NullCongruence, fmt
from .geodesic import Trajectory, hermite
from .grids import LGrid, grid_diff, numeric_rank
from .hypersurface import DEFAULT_RANK_TOL, GraphSlice
from .lorentz_chart import MetricModel, metric_batch

CROSS_TOL = 1e-10
TRANS_TOL = 1e-2
PHI_TOL = 1e-8


class SlicerError(ValueError):
    pass


class TangentialCrossingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Crossing:
    l: tuple
    l_params: np.ndarray
    t_star: float
    point: np.ndarray
    m_params: np.ndarray
    N_cross: np.ndarray
    phi: Optional[np.ndarray] = None
    phi_small: bool = False


@dataclass(frozen=True)
class SlicedLegendrian:
    """Crossings per L-sample (flattened C order), each list ordered by ``t_star``."""

    slice: GraphSlice
    grid: LGrid
    crossings: tuple
    window: tuple
    diagnostics: tuple = ()

    def at(self, l) -> tuple:
        return self.crossings[int(np.ravel_multi_index(tuple(l), self.grid.shape))] \
            if self.grid.ndim else self.crossings[0]

    @property
    def n_crossings(self) -> int:
        return sum(len(c) for c in self.crossings)

    @property
    def filled(self) -> bool:
        return all(c.phi is not None for cs in self.crossings for c in cs)

    def sheet(self, index: int = 0) -> dict:
        """Arrays over the grid for crossing number ``index`` (NaN where absent)."""
        m = self.slice.dim
        shape = self.grid.shape
        valid = np.zeros(shape, dtype=bool)
        t_star = np.full(shape, np.nan)
        mp = np.full(shape + (m,), np.nan)
        phi = np.full(shape + (m,), np.nan)
        N = np.full(shape + (m + 1,), np.nan)
        pts = np.full(shape + (m + 1,), np.nan)
        for flat, cs in enumerate(self.crossings):
            if len(cs) <= index:
                continue
            c = cs[index]
            idx = np.unravel_index(flat, shape) if shape else ()
            valid[idx] = True
            t_star[idx] = c.t_star
            mp[idx] = c.m_params
            N[idx] = c.N_cross
            pts[idx] = c.point
            if c.phi is not None:
                phi[idx] = c.phi
        return {"valid": valid, "t_star": t_star, "m_params": mp, "phi": phi, "N": N,
                "point": pts}


def _trajectories(nc: NullCongruence) -> tuple:
    if nc.trajectories is not None:
        return nc.trajectories
    out = []
    for idx in nc.grid.indices():
        c = nc.covered[idx]
        out.append(Trajectory.from_samples(nc.times[c], nc.nu[idx][c], nc.N[idx][c]))
    return tuple(out)


def _F(sl: GraphSlice, x: np.ndarray) -> np.ndarray:
    m = sl.dim
    return x[..., m] - sl.height(x[..., :m])


def _dF(sl: GraphSlice, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = sl.dim
    return v[..., m] - np.einsum("...i,...i->...", sl.gradient(x[..., :m]), v[..., :m])


def find_crossings(nc: NullCongruence, sl: GraphSlice, cross_tol: float = CROSS_TOL,
                   max_newton: int = 8) -> SlicedLegendrian:
    """Bracket sign changes of ``F`` on node intervals, bisect, then Newton-polish."""
    m = sl.dim
    if nc.n != m + 1:
        raise SlicerError(f"slice dimension {m} does not match the congruence ({nc.n - 1})")
    trajs = _trajectories(nc)
    sizes = np.array([len(tr.t) for tr in trajs])
    starts = np.concatenate([[0], np.cumsum(sizes)])
    T = np.concatenate([tr.t for tr in trajs])
    X = np.concatenate([tr.x for tr in trajs])
    V = np.concatenate([tr.v for tr in trajs])
    A = np.concatenate([tr.a for tr in trajs])
    F = _F(sl, X)

    owner = np.repeat(np.arange(len(trajs)), sizes)
    same = owner[:-1] == owner[1:]
    j = np.nonzero(same & (((F[:-1] < 0) & (F[1:] > 0)) | ((F[:-1] > 0) & (F[1:] < 0))))[0]
    node_roots = np.nonzero(F == 0)[0]

    # tangential near-roots: tiny |F| at a node with no sign change on either side
    near = np.nonzero((np.abs(F) <= cross_tol) & (F != 0))[0]
    n_tangential = 0
    for q in near:
        left = q > 0 and same[q - 1] and np.sign(F[q - 1]) != np.sign(F[q])
        right = q + 1 < len(F) and same[q] and np.sign(F[q + 1]) != np.sign(F[q])
        if not (left or right):
            n_tangential += 1
    if n_tangential:
        warnings.warn(f"{n_tangential} tangential near-root(s): |F| <= {cross_tol} without a sign change",
                      TangentialCrossingWarning, stacklevel=2)

    t0, t1 = T[j], T[j + 1]
    x0, x1, v0, v1, a0, a1 = X[j], X[j + 1], V[j], V[j + 1], A[j], A[j + 1]
    lo, hi = t0.copy(), t1.copy()
    flo = F[j]

    def feval(t):
        return _F(sl, hermite(t0, t1, x0, x1, v0, v1, t))

    if j.size:
        for _ in range(int(math.ceil(math.log2(1e3)))):
            mid = 0.5 * (lo + hi)
            fm = feval(mid)
            left = np.sign(fm) == np.sign(flo)
            lo = np.where(left, mid, lo)
            flo = np.where(left, fm, flo)
            hi = np.where(left, hi, mid)
        t = 0.5 * (lo + hi)
        for _ in range(max_newton):
            x = hermite(t0, t1, x0, x1, v0, v1, t)
            v = hermite(t0, t1, v0, v1, a0, a1, t)
            f = _F(sl, x)
            if np.all(np.abs(f) <= cross_tol):
                break
            d = _dF(sl, x, v)
            with np.errstate(all="ignore"):
                step = np.where((d != 0) & (np.abs(f) > cross_tol), f / d, 0.0)
            t = np.clip(t - step, lo, hi)
    else:
        t = np.empty(0)

    roots_i = np.concatenate([owner[j], owner[node_roots]])
    roots_t = np.concatenate([t, T[node_roots]])
    xs = np.concatenate([hermite(t0, t1, x0, x1, v0, v1, t) if j.size else np.empty((0, m + 1)),
                         X[node_roots]])
    vs = np.concatenate([hermite(t0, t1, v0, v1, a0, a1, t) if j.size else np.empty((0, m + 1)),
                         V[node_roots]])

    order = np.lexsort((roots_t, roots_i))
    per_l = [[] for _ in trajs]
    pts = nc.grid.points()
    shape = nc.grid.shape
    for q in order:
        r = int(roots_i[q])
        idx = tuple(int(i) for i in np.unravel_index(r, shape)) if shape else ()
        per_l[r].append(Crossing(l=idx, l_params=np.asarray(pts[idx]) if shape else np.zeros(0),
                                 t_star=float(roots_t[q]), point=xs[q].copy(),
                                 m_params=xs[q, :m].copy(), N_cross=vs[q].copy()))
    diags = []
    empty = sum(1 for c in per_l if not c)
    w = (float(min(tr.t_lo for tr in trajs)), float(max(tr.t_hi for tr in trajs)))
    if empty:
        diags.append(f"no sign change in window [{w[0]!r}, {w[1]!r}] for {empty} of {len(per_l)} rays")
    if n_tangential:
        diags.append(f"{n_tangential} tangential near-root(s)")
    return SlicedLegendrian(slice=sl, grid=nc.grid, crossings=tuple(tuple(c) for c in per_l),
                            window=w, diagnostics=tuple(diags))


@dataclass
class TransversalityReport:
    margins: np.ndarray
    trans_tol: float

    @property
    def flagged(self) -> np.ndarray:
        return self.margins < self.trans_tol

    @property
    def passed(self) -> bool:
        return not np.any(self.flagged)

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else math.inf


def crossing_margins(sl: SlicedLegendrian) -> np.ndarray:
    """``|F'(t_star)| / |N|`` for every crossing in storage order."""
    cs = [c for cl in sl.crossings for c in cl]
    if not cs:
        return np.empty(0)
    x = np.array([c.point for c in cs])
    N = np.array([c.N_cross for c in cs])
    return np.abs(_dF(sl.slice, x, N)) / np.linalg.norm(N, axis=-1)


def transversality_check(nc: NullCongruence, sl: SlicedLegendrian,
                         trans_tol: float = TRANS_TOL) -> TransversalityReport:
    return TransversalityReport(margins=crossing_margins(sl), trans_tol=trans_tol)


def slice_jacobian(sl: GraphSlice, m_params: np.ndarray) -> np.ndarray:
    m = sl.dim
    mp = np.asarray(m_params, dtype=float)
    J = np.zeros(mp.shape[:-1] + (m + 1, m))
    J[..., np.arange(m), np.arange(m)] = 1.0
    J[..., m, :] = sl.gradient(mp)
    return J


def fill_phi(model: MetricModel, nc: NullCongruence, sl: SlicedLegendrian,
             phi_tol: float = PHI_TOL, strict: bool = False) -> SlicedLegendrian:
    """Attach ``phi = (G N)^T J`` to every crossing.

    A crossing whose ``|phi|`` falls below ``phi_tol * |N| * |J|`` is flagged
    (``phi_small``); with ``strict`` it raises instead.
    """
    cs = [c for cl in sl.crossings for c in cl]
    if not cs:
        return sl
    x = np.array([c.point for c in cs])
    N = np.array([c.N_cross for c in cs])
    J = slice_jacobian(sl.slice, np.array([c.m_params for c in cs]))
    G = metric_batch(model, x)
    phi = np.einsum("pa,pab,pbi->pi", N, G, J)
    scale = np.linalg.norm(N, axis=-1) * np.linalg.norm(J, ord=2, axis=(-2, -1))
    pn = np.linalg.norm(phi, axis=-1)
    small = (pn < phi_tol * scale) | (pn == 0)
    if strict and np.any(small):
        c = cs[int(np.argmax(small))]
        raise SlicerError(f"phi vanishes at l = {c.l}, t_star = {c.t_star!r}")
    it = iter(range(len(cs)))
    new = []
    for cl in sl.crossings:
        row = []
        for c in cl:
            q = next(it)
            row.append(replace(c, phi=phi[q], phi_small=bool(small[q])))
        new.append(tuple(row))
    return replace(sl, crossings=tuple(new))


def sheet_mask(sl: SlicedLegendrian, index: int = 0) -> np.ndarray:
    """Samples on sheet ``index`` whose full difference stencil is on the sheet too."""
    valid = sl.sheet(index)["valid"]
    ok = valid & sl.grid.interior_mask()
    for ax in range(sl.grid.ndim):
        if sl.grid.periodic[ax]:
            ok &= np.roll(valid, 1, axis=ax) & np.roll(valid, -1, axis=ax)
        else:
            n = sl.grid.shape[ax]
            v = np.moveaxis(valid, ax, 0)
            nb = np.zeros_like(v)
            if n >= 3:
                nb[1:-1] = v[:-2] & v[2:]
            ok &= np.moveaxis(nb, 0, ax)
    return ok


@dataclass
class SlicedResidualReport:
    residual: np.ndarray
    mask: np.ndarray
    slice_membership: float
    front_membership: float
    phi_ratio_min: float
    max_t_jump: float
    t_jump_bound: float

    @property
    def max(self) -> float:
        v = self.residual[self.mask]
        return float(np.max(v)) if v.size else 0.0

    @property
    def rms(self) -> float:
        v = self.residual[self.mask]
        return float(np.sqrt(np.mean(v ** 2))) if v.size else 0.0

    @property
    def membership(self) -> float:
        return max(self.slice_membership, self.front_membership)


def _normalized_pairing(phi, D):
    num = np.abs(np.einsum("...i,...i->...", phi, D))
    den = np.linalg.norm(phi, axis=-1) * np.linalg.norm(D, axis=-1)
    out = np.zeros(num.shape)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def sliced_legendrian_residual(model: MetricModel, sl: SlicedLegendrian,
                               nc: Optional[NullCongruence] = None) -> SlicedResidualReport:
    """``max_i |phi(D_i m)| / (|phi| |D_i m|)`` on the first-crossing sheet.

    Also re-checks that each crossing lies on the slice and, when ``nc``
    carries trajectories, on the front.
    """
    if not sl.filled:
        raise SlicerError("phi is not filled; call fill_phi first")
    sh = sl.sheet(0)
    mask = sheet_mask(sl, 0)
    mp = np.where(sh["valid"][..., None], sh["m_params"], 0.0)
    phi = np.where(sh["valid"][..., None], sh["phi"], 0.0)
    res = np.zeros(sl.grid.shape)
    jump = 0.0
    tvals = np.where(sh["valid"], sh["t_star"], 0.0)
    for ax in range(sl.grid.ndim):
        D = grid_diff(mp, sl.grid, ax)
        res = np.maximum(res, _normalized_pairing(phi, D))
        dt = np.abs(grid_diff(tvals, sl.grid, ax)) * 2 * sl.grid.spacings[ax]
        if np.any(mask):
            jump = max(jump, float(np.max(dt[mask])))
    res = np.where(mask, res, 0.0)

    cs = [c for cl in sl.crossings for c in cl]
    slice_mem = front_mem = 0.0
    ratio = math.inf
    bound = 0.0
    if cs:
        x = np.array([c.point for c in cs])
        slice_mem = float(np.max(np.abs(_F(sl.slice, x))))
        Nn = np.linalg.norm([c.N_cross for c in cs], axis=-1)
        ratio = float(np.min(np.linalg.norm([c.phi for c in cs], axis=-1) / Nn))
        h = max(sl.grid.spacings) if sl.grid.ndim else 0.0
        bound = 10 * h * float(np.max(Nn))
        if nc is not None and nc.trajectories is not None:
            for c in cs:
                p = nc.trajectory(c.l).sample(c.t_star).x
                front_mem = max(front_mem, float(np.max(np.abs(p - c.point))))
    return SlicedResidualReport(residual=res, mask=mask, slice_membership=slice_mem,
                                front_membership=front_mem, phi_ratio_min=ratio,
                                max_t_jump=jump, t_jump_bound=bound)


def _direction_rows(V, D):
    nrm = np.linalg.norm(V, axis=-1, keepdims=True)
    d = V / nrm
    return (D - d * np.sum(d * D, axis=-1, keepdims=True)) / nrm


def sliced_differentials(sl: SlicedLegendrian, index: int = 0) -> np.ndarray:
    """Stacked differential of ``(m_params, phi/|phi|)``, shape ``grid.shape + (2m, k)``."""
    sh = sl.sheet(index)
    mp = np.where(sh["valid"][..., None], sh["m_params"], 0.0)
    phi = np.where(sh["valid"][..., None], sh["phi"], 1.0)
    cols = []
    for ax in range(sl.grid.ndim):
        cols.append(np.concatenate([grid_diff(mp, sl.grid, ax),
                                    _direction_rows(phi, grid_diff(phi, sl.grid, ax))], axis=-1))
    return np.stack(cols, axis=-1)


def sliced_ranks(sl: SlicedLegendrian, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Rank on the first sheet; -1 off the sheet interior."""
    r = numeric_rank(sliced_differentials(sl), rank_tol)
    return np.where(sheet_mask(sl), r, -1)


def sliced_rank(model: MetricModel, sl: SlicedLegendrian, l, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    return int(sliced_ranks(sl, rank_tol)[tuple(l)])


def sliced_csv(sl: SlicedLegendrian) -> str:
    k = sl.grid.ndim
    m = sl.slice.dim
    header = ([f"l_{i}" for i in range(k)] + ["crossing_index", "t_star"]
              + [f"m_{i}" for i in range(m)] + [f"phi_{i}" for i in range(m)])
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for cl in sl.crossings:
        for ci, c in enumerate(cl):
            phi = c.phi if c.phi is not None else np.full(m, np.nan)
            row = ([fmt(v) for v in c.l_params] + [str(ci), fmt(c.t_star)]
                   + [fmt(v) for v in c.m_params] + [fmt(v) for v in phi])
            out.write(",".join(row) + "\n")
    return out.getvalue()
