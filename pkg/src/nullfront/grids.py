"""Structured parameter grids and finite differences on them."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class LGrid:
    """Tensor-product sample grid over a parameter manifold.

    ``axes`` are 1-D sample arrays; periodic axes exclude the endpoint and
    wrap. ``kind`` is ``"rectangle"``, ``"circle"`` or ``"sphere"`` (the
    lat-long grid on S^2 with polar caps removed) or ``"point"`` (S^0-free,
    zero-dimensional).
    """

    axes: tuple
    periodic: tuple
    kind: str = "rectangle"

    def __post_init__(self):
        if len(self.axes) != len(self.periodic):
            raise ValueError("axes and periodic flags differ in length")
        for a in self.axes:
            a = np.asarray(a)
            if a.ndim != 1 or len(a) < 1:
                raise ValueError("each axis must be a non-empty 1-D array")
            if len(a) > 1 and not np.all(np.diff(a) > 0):
                raise ValueError("axis samples must be strictly increasing")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.axes else 1

    @property
    def spacings(self) -> tuple:
        out = []
        for a, per in zip(self.axes, self.periodic):
            a = np.asarray(a)
            out.append(float(a[1] - a[0]) if len(a) > 1 else 0.0)
        return tuple(out)

    def points(self) -> np.ndarray:
        """Array of shape ``shape + (ndim,)``."""
        if not self.axes:
            return np.zeros((0,))
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)

    def flat_points(self) -> np.ndarray:
        return self.points().reshape(self.size, self.ndim)

    def indices(self):
        """Multi-indices in lexicographic (C) order."""
        return itertools.product(*[range(n) for n in self.shape])

    def neighbors(self, idx):
        """Axis-neighbours of ``idx`` (periodic axes wrap)."""
        for ax, (n, per) in enumerate(zip(self.shape, self.periodic)):
            for step in (-1, 1):
                j = idx[ax] + step
                if per:
                    j %= n
                elif not 0 <= j < n:
                    continue
                if j == idx[ax]:
                    continue
                nb = list(idx)
                nb[ax] = j
                yield tuple(nb)

    def interior_mask(self) -> np.ndarray:
        """True where every axis has both central-difference neighbours."""
        mask = np.ones(self.shape, dtype=bool)
        for ax, (n, per) in enumerate(zip(self.shape, self.periodic)):
            if per:
                if n < 3:
                    mask[:] = False
                continue
            sl = [slice(None)] * self.ndim
            if n < 3:
                mask[:] = False
                continue
            sl[ax] = 0
            mask[tuple(sl)] = False
            sl[ax] = n - 1
            mask[tuple(sl)] = False
        return mask

    # constructors

    @classmethod
    def rectangle(cls, bounds: Sequence[tuple], counts: Sequence[int],
                  periodic: Optional[Sequence[bool]] = None) -> "LGrid":
        periodic = tuple(periodic or [False] * len(counts))
        axes = []
        for (lo, hi), n, per in zip(bounds, counts, periodic):
            if per:
                axes.append(lo + (hi - lo) * np.arange(n) / n)
            else:
                axes.append(np.linspace(lo, hi, n))
        return cls(tuple(axes), periodic, "rectangle")

    @classmethod
    def circle(cls, n: int) -> "LGrid":
        return cls((2 * math.pi * np.arange(n) / n,), (True,), "circle")

    @classmethod
    def sphere(cls, n_lat: int, n_lon: int, eps_pole: Optional[float] = None) -> "LGrid":
        """Colatitude in ``[eps, pi - eps]``, longitude periodic.

        The default ``eps`` is ten colatitude spacings:
        ``eps = 10 * (pi - 2 eps) / (n_lat - 1)``.
        """
        if eps_pole is None:
            eps_pole = 10 * math.pi / (n_lat - 1 + 20)
        if not 0 < eps_pole < math.pi / 2:
            raise ValueError("eps_pole must lie in (0, pi/2)")
        colat = np.linspace(eps_pole, math.pi - eps_pole, n_lat)
        lon = 2 * math.pi * np.arange(n_lon) / n_lon
        return cls((colat, lon), (False, True), "sphere")

    @classmethod
    def for_sphere_dim(cls, k: int, n: int, n_lon: Optional[int] = None,
                       eps_pole: Optional[float] = None) -> "LGrid":
        """Grid over S^k for k in {1, 2}."""
        if k == 1:
            return cls.circle(n)
        if k == 2:
            return cls.sphere(n, n_lon or 2 * n, eps_pole)
        raise ValueError("sphere grids are available for S^1 and S^2 only")


def unit_directions(grid: LGrid) -> np.ndarray:
    """Euclidean unit vectors ``u(l)`` in R^{k+1} for circle and sphere grids."""
    pts = grid.points()
    if grid.kind == "circle":
        th = pts[..., 0]
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if grid.kind == "sphere":
        ph, th = pts[..., 0], pts[..., 1]
        return np.stack([np.sin(ph) * np.cos(th), np.sin(ph) * np.sin(th), np.cos(ph)], axis=-1)
    raise ValueError(f"grid kind {grid.kind!r} has no direction field")


def grid_diff(values: np.ndarray, grid: LGrid, axis: int, one_sided: bool = True) -> np.ndarray:
    """Derivative along grid ``axis`` of ``values`` (grid axes leading).

    Central differences in the interior, wrapped on periodic axes, and
    second-order one-sided differences at edges (NaN at edges if
    ``one_sided`` is False).
    """
    values = np.asarray(values, dtype=float)
    n = grid.shape[axis]
    h = grid.spacings[axis]
    if n < 2 or h == 0:
        return np.zeros_like(values)
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    if grid.periodic[axis]:
        out[:] = (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2 * h)
    else:
        if n >= 3:
            out[1:-1] = (v[2:] - v[:-2]) / (2 * h)
            if one_sided:
                out[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
                out[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
            else:
                out[0] = np.nan
                out[-1] = np.nan
        else:
            out[:] = (v[1] - v[0]) / h if one_sided else np.nan
    return np.moveaxis(out, 0, axis)


def uniform_diff(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central differences with one-sided second-order edges along ``axis``."""
    values = np.asarray(values, dtype=float)
    v = np.moveaxis(values, axis, 0)
    n = v.shape[0]
    out = np.empty_like(v)
    if n >= 3:
        out[1:-1] = (v[2:] - v[:-2]) / (2 * h)
        out[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
        out[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    elif n == 2:
        out[:] = (v[1] - v[0]) / h
    else:
        out[:] = np.nan
    return np.moveaxis(out, 0, axis)


def numeric_rank(D: np.ndarray, rank_tol: float) -> np.ndarray:
    """Numerical rank of the trailing 2-D matrices: singular values >= rank_tol * largest."""
    s = np.linalg.svd(D, compute_uv=False)
    smax = s[..., :1]
    return np.sum((s >= rank_tol * smax) & (smax > 0), axis=-1)
