"""Least-squares sphere/circle fits and cusp-edge detection on sliced sheets."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..grids import LGrid, grid_diff
from ..slicer import SlicedLegendrian, sheet_mask, sliced_differentials

CUSP_TOL = 0.1
COLLAPSE_TOL = 1e-6


@dataclass(frozen=True)
class SphereFit:
    center: np.ndarray
    radius: float
    rms: float


def sphere_fit(points) -> SphereFit:
    """Algebraic fit ``|x|^2 = 2 c.x + (r^2 - |c|^2)``."""
    P = np.asarray(points, dtype=float).reshape(-1, np.shape(points)[-1])
    if len(P) < P.shape[1] + 1:
        raise ValueError(f"need at least {P.shape[1] + 1} points for a sphere fit")
    A = np.hstack([2 * P, np.ones((len(P), 1))])
    b = np.sum(P * P, axis=1)
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    c = sol[:-1]
    r = float(np.sqrt(sol[-1] + c @ c))
    d = np.linalg.norm(P - c, axis=1) - r
    return SphereFit(center=c, radius=r, rms=float(np.sqrt(np.mean(d * d))))


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    normal: np.ndarray
    radius: float
    rms: float
    plane_rms: float


def circle_fit(points) -> CircleFit:
    """Best plane through 3-D points, then a Kasa circle fit inside it."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or len(P) < 3:
        raise ValueError("circle fit needs at least three 3-D points")
    c0 = P.mean(axis=0)
    _, _, vh = np.linalg.svd(P - c0)
    e1, e2, nrm = vh
    if nrm[np.argmax(np.abs(nrm))] < 0:
        nrm = -nrm
    q = np.stack([(P - c0) @ e1, (P - c0) @ e2], axis=1)
    A = np.hstack([2 * q, np.ones((len(q), 1))])
    sol = np.linalg.lstsq(A, np.sum(q * q, axis=1), rcond=None)[0]
    a, b = sol[:2]
    r = float(np.sqrt(sol[2] + a * a + b * b))
    center = c0 + a * e1 + b * e2
    d = np.linalg.norm(q - [a, b], axis=1) - r
    off = (P - c0) @ nrm
    return CircleFit(center=center, normal=nrm, radius=r, rms=float(np.sqrt(np.mean(d * d))),
                     plane_rms=float(np.sqrt(np.mean(off * off))))


@dataclass(frozen=True)
class CuspLocus:
    """Flagged sheet samples and their refined positions.

    ``ratio`` is ``sigma_min(D m) / sigma_max(D lam~)`` over the grid (NaN off
    the sheet interior). ``components`` groups rows of ``indices`` into
    grid-connected pieces.
    """

    indices: list
    l_params: np.ndarray
    points: np.ndarray
    ratio: np.ndarray
    components: list

    @property
    def empty(self) -> bool:
        return not self.indices

    def component_points(self, k: int) -> np.ndarray:
        return self.points[self.components[k]]


def _neighbor(a: np.ndarray, ax: int, step: int, periodic: bool) -> np.ndarray:
    out = np.roll(a, -step, axis=ax)
    if not periodic:
        idx = [slice(None)] * a.ndim
        idx[ax] = -1 if step > 0 else 0
        out[tuple(idx)] = np.nan
    return out


def detect_cusp_locus(sl: SlicedLegendrian, cusp_tol: float = CUSP_TOL,
                      collapse_tol: float = COLLAPSE_TOL) -> CuspLocus:
    """Where the base differential of the sliced map drops rank.

    A sheet sample is flagged when its ratio is at most ``cusp_tol`` and is a
    discrete minimum along some grid axis, or when the ratio is at most
    ``collapse_tol`` (the whole differential collapses). Flagged samples are
    moved to the vertex of a parabola fitted to ``ratio^2`` along that axis.
    """
    grid = sl.grid
    sh = sl.sheet(0)
    mask = sheet_mask(sl)
    mp = np.where(sh["valid"][..., None], sh["m_params"], 0.0)
    Dm = np.stack([grid_diff(mp, grid, ax) for ax in range(grid.ndim)], axis=-1)
    smin = np.linalg.svd(Dm, compute_uv=False)[..., -1]
    smax = np.linalg.svd(sliced_differentials(sl), compute_uv=False)[..., 0]
    ratio = np.where(smax > 0, smin / np.where(smax > 0, smax, 1.0), 0.0)
    ratio = np.where(mask, ratio, np.nan)

    best_axis = np.full(grid.shape, -1)
    best_curv = np.full(grid.shape, -np.inf)
    with np.errstate(invalid="ignore"):
        for ax in range(grid.ndim):
            left = _neighbor(ratio, ax, -1, grid.periodic[ax])
            right = _neighbor(ratio, ax, 1, grid.periodic[ax])
            tie = 1e-9 * np.maximum(1.0, ratio)
            is_min = (ratio <= np.fmin(left, right) + tie) & (ratio < np.fmax(left, right) - tie) \
                & np.isfinite(left) & np.isfinite(right)
            curv = left ** 2 - 2 * ratio ** 2 + right ** 2
            better = is_min & (curv > best_curv)
            best_axis = np.where(better, ax, best_axis)
            best_curv = np.where(better, curv, best_curv)
        flagged = mask & (((ratio <= cusp_tol) & (best_axis >= 0)) | (ratio <= collapse_tol))

    pts_l = grid.points()
    indices, lps, pts = [], [], []
    for idx in grid.indices():
        if not flagged[idx]:
            continue
        lp = np.array(pts_l[idx], dtype=float)
        p = mp[idx].copy()
        ax = int(best_axis[idx])
        if ax >= 0:
            n = grid.shape[ax]
            lo = list(idx)
            hi = list(idx)
            lo[ax] = (idx[ax] - 1) % n
            hi[ax] = (idx[ax] + 1) % n
            a, b, c = ratio[tuple(lo)] ** 2, ratio[idx] ** 2, ratio[tuple(hi)] ** 2
            den = a - 2 * b + c
            s = float(np.clip(0.5 * (a - c) / den, -0.5, 0.5)) if den > 0 else 0.0
            pa, pc = mp[tuple(lo)], mp[tuple(hi)]
            p = p + s * (pc - pa) / 2 + s * s * (pa - 2 * p + pc) / 2
            lp[ax] += s * grid.spacings[ax]
        indices.append(idx)
        lps.append(lp)
        pts.append(p)

    comps = _components(grid, indices)
    m = mp.shape[-1]
    return CuspLocus(indices=indices, l_params=np.array(lps).reshape(-1, grid.ndim),
                     points=np.array(pts).reshape(-1, m), ratio=ratio, components=comps)


def _components(grid: LGrid, indices: list) -> list:
    pos = {idx: i for i, idx in enumerate(indices)}
    seen = set()
    comps = []
    for idx in indices:
        if idx in seen:
            continue
        seen.add(idx)
        queue = deque([idx])
        members = []
        while queue:
            cur = queue.popleft()
            members.append(pos[cur])
            for nb in grid.neighbors(cur):
                if nb in pos and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        comps.append(sorted(members))
    return comps


def _l_distance(grid: LGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(a[:, None, :] - b[None, :, :])
    for ax, per in enumerate(grid.periodic):
        if per:
            period = grid.spacings[ax] * grid.shape[ax]
            d[..., ax] = np.minimum(d[..., ax], period - d[..., ax])
    return np.sqrt(np.sum(d * d, axis=-1))


def closest_component(grid: LGrid, locus: CuspLocus, reference_l: np.ndarray) -> int:
    """Component whose L-parameters lie closest (mean nearest distance) to ``reference_l``."""
    if locus.empty:
        return -1
    best, best_d = -1, np.inf
    for k, comp in enumerate(locus.components):
        d = float(np.mean(np.min(_l_distance(grid, locus.l_params[comp], reference_l), axis=1)))
        if d < best_d:
            best, best_d = k, d
    return best


def largest_component(locus: CuspLocus) -> int:
    if locus.empty:
        return -1
    return int(np.argmax([len(c) for c in locus.components]))
