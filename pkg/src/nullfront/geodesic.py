"""Geodesic integration with dense output.

The state is ``y = (x, v)`` with ``x' = v`` and ``v'^k = -Gamma^k_ij v^i v^j``.
Rays are advanced in batches by an embedded Dormand-Prince 5(4) pair, each
ray with its own step size. Accepted nodes store ``(t, x, v, a)`` so that the
trajectory can be resampled by cubic Hermite interpolation of ``x`` (slopes
``v``) and ``v`` (slopes ``a``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lorentz_chart import (ChartError, MetricModel, christoffel_batch, metric_batch,
                            _point)

log = logging.getLogger(__name__)

WINDOW_END = "window_end"
STEP_UNDERFLOW = "step_underflow"
NON_FINITE = "non_finite"
LEFT_BOX = "left_box"
MAX_STEPS = "max_steps"

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights (7 stages, FSAL)
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension, y(t + s h) = y + h * K^T (P @ [s, s^2, s^3, s^4])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class IntegrationError(ValueError):
    pass


class DomainError(IntegrationError):
    """Requested parameter lies outside what the trajectory covers."""


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.25
    initial_step: float = 1e-2
    max_steps: int = 200_000
    renormalize_null: bool = False
    adaptive: bool = True
    box: Optional[tuple] = None  # (lo, hi) arrays bounding the chart region

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not (self.max_step > 0 and self.initial_step > 0):
            raise ValueError("step sizes must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class GeodesicState:
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Accepted nodes of one geodesic, ordered by parameter.

    ``window`` is the requested interval; ``t_lo``/``t_hi`` bound what was
    actually covered. ``termination_backward``/``termination_forward`` record
    why integration stopped on each side of ``t = 0``.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    window: tuple
    termination_backward: str = WINDOW_END
    termination_forward: str = WINDOW_END
    null_projection: float = 0.0

    @property
    def t_lo(self) -> float:
        return float(self.t[0])

    @property
    def t_hi(self) -> float:
        return float(self.t[-1])

    @property
    def termination(self) -> str:
        for reason in (self.termination_backward, self.termination_forward):
            if reason != WINDOW_END:
                return reason
        return WINDOW_END

    @property
    def complete(self) -> bool:
        return self.termination == WINDOW_END

    def covers(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.t[0]) & (t <= self.t[-1])

    def sample(self, t: float) -> GeodesicState:
        x, v = self.sample_many(np.array([t], dtype=float))
        return GeodesicState(x[0], v[0])

    def sample_many(self, ts) -> tuple:
        """Hermite-interpolated ``(x, v)`` at each parameter in ``ts``."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and not np.all(self.covers(ts)):
            bad = ts[~self.covers(ts)][0]
            raise DomainError(f"t = {bad!r} outside covered range [{self.t_lo!r}, {self.t_hi!r}]")
        if len(self.t) == 1:
            return (np.repeat(self.x, len(ts), axis=0), np.repeat(self.v, len(ts), axis=0))
        i = np.clip(np.searchsorted(self.t, ts, side="right") - 1, 0, len(self.t) - 2)
        x = hermite(self.t[i], self.t[i + 1], self.x[i], self.x[i + 1],
                    self.v[i], self.v[i + 1], ts)
        v = hermite(self.t[i], self.t[i + 1], self.v[i], self.v[i + 1],
                    self.a[i], self.a[i + 1], ts)
        # exact at nodes
        hit = self.t[i] == ts
        x[hit] = self.x[i[hit]]
        v[hit] = self.v[i[hit]]
        hit = self.t[i + 1] == ts
        x[hit] = self.x[i[hit] + 1]
        v[hit] = self.v[i[hit] + 1]
        return x, v

    @classmethod
    def from_samples(cls, t, x, v, termination=WINDOW_END) -> "Trajectory":
        """Wrap externally sampled curve data; accelerations by finite differences."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        a = np.gradient(v, t, axis=0) if len(t) > 1 else np.zeros_like(v)
        return cls(t=t, x=x, v=v, a=a, window=(float(t[0]), float(t[-1])),
                   termination_backward=termination, termination_forward=termination)


def hermite(t0, t1, y0, y1, d0, d1, t):
    """Cubic Hermite interpolant on ``[t0, t1]`` (vectorized over leading axis)."""
    h = np.asarray(t1 - t0, dtype=float)
    s = (np.asarray(t, dtype=float) - t0) / h
    s = s[..., None]
    h = h[..., None]
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def geodesic_rhs(model: MetricModel, s: GeodesicState) -> GeodesicState:
    x = _point(model, s.x)
    v = np.asarray(s.v, dtype=float)
    y = np.concatenate([x, v])[None, :]
    dy = _rhs_batch(model, y)[0]
    return GeodesicState(dy[: model.n], dy[model.n:])


def _rhs_batch(model: MetricModel, y: np.ndarray) -> np.ndarray:
    n = model.n
    x = y[:, :n]
    v = y[:, n:]
    if model.flat:
        return np.concatenate([v, np.zeros_like(v)], axis=1)
    gam = christoffel_batch(model, x)
    acc = -np.einsum("pkij,pi,pj->pk", gam, v, v)
    return np.concatenate([v, acc], axis=1)


def _renormalize(model: MetricModel, x: np.ndarray, v: np.ndarray):
    """Rescale the time component of each ``v`` so that ``g(v, v) = 0``."""
    G = metric_batch(model, x)
    vt = v[:, -1]
    vs = v[:, :-1]
    a = G[:, -1, -1]
    b = 2 * np.einsum("pi,pi->p", G[:, -1, :-1], vs)
    c = np.einsum("pi,pij,pj->p", vs, G[:, :-1, :-1], vs)
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (a != 0)
    root = np.sqrt(np.where(ok, disc, 0.0))
    r1 = (-b + root) / np.where(a != 0, 2 * a, 1.0)
    r2 = (-b - root) / np.where(a != 0, 2 * a, 1.0)
    new = np.where(np.abs(r1 - vt) <= np.abs(r2 - vt), r1, r2)
    new = np.where(ok, new, vt)
    out = v.copy()
    out[:, -1] = new
    return out, np.abs(new - vt)


def _error_norm(err, y0, y1, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return np.sqrt(np.mean((err / scale) ** 2, axis=1))


def _march(model, y0, t_end, cfg, direction):
    """Advance every ray from ``t = 0`` toward ``t_end`` (same sign as ``direction``).

    Returns per-ray node arrays and termination reasons.
    """
    npts, dim2 = y0.shape
    n = model.n
    records_idx, records_t, records_y, records_f = [], [], [], []
    reason = np.array([WINDOW_END] * npts, dtype=object)
    proj = np.zeros(npts)
    if t_end == 0.0:
        return records_idx, records_t, records_y, records_f, reason, proj

    t = np.zeros(npts)
    y = y0.copy()
    f = _safe_rhs(model, y)
    h = np.full(npts, min(cfg.initial_step, cfg.max_step, abs(t_end)))
    active = np.all(np.isfinite(f), axis=1)
    reason[~active] = NON_FINITE
    steps = np.zeros(npts, dtype=int)
    box = None
    if cfg.box is not None:
        box = (np.asarray(cfg.box[0], dtype=float), np.asarray(cfg.box[1], dtype=float))

    while np.any(active):
        idx = np.nonzero(active)[0]
        ti, yi, fi = t[idx], y[idx], f[idx]
        remaining = np.abs(t_end - ti)
        hi = np.minimum(h[idx], remaining)
        hs = direction * hi
        K = np.empty((7, len(idx), dim2))
        K[0] = fi
        with np.errstate(all="ignore"):
            for s in range(1, 6):
                ys = yi + hs[:, None] * np.tensordot(_A[s], K[:s], axes=(0, 0))
                K[s] = _safe_rhs(model, ys)
            y_new = yi + hs[:, None] * np.tensordot(_B, K[:6], axes=(0, 0))
            K[6] = _safe_rhs(model, y_new)
            err = hs[:, None] * np.tensordot(_E, K, axes=(0, 0))
            en = _error_norm(err, yi, y_new, cfg)
            # cubic Hermite midpoint vs the fourth-order continuous extension
            mid_dp = yi + hs[:, None] * np.tensordot(_P @ np.array([0.5, 0.25, 0.125, 0.0625]), K,
                                                     axes=(0, 0))
            mid_h = 0.5 * (yi + y_new) + hs[:, None] * (K[0] - K[6]) / 8.0
            ei = _error_norm(mid_h - mid_dp, yi, y_new, cfg) / 10.0
        finite = np.all(np.isfinite(y_new), axis=1) & np.all(np.isfinite(K[6]), axis=1)
        total = np.where(finite, np.maximum(en, ei), np.inf)
        if cfg.adaptive:
            accept = total <= 1.0
        else:
            accept = finite
        # step-size update
        with np.errstate(divide="ignore"):
            factor = np.where(total == 0, 5.0, 0.9 * np.power(np.where(total > 0, total, 1.0), -0.2))
        factor = np.clip(factor, 0.2, 5.0)
        if cfg.adaptive:
            h_new = np.minimum(hi * np.where(accept, factor, np.minimum(factor, 0.5)), cfg.max_step)
        else:
            h_new = h[idx]

        acc = idx[accept]
        if acc.size:
            yn = y_new[accept]
            fn = K[6][accept]
            if cfg.renormalize_null:
                vn, dv = _renormalize(model, yn[:, :n], yn[:, n:])
                yn = np.concatenate([yn[:, :n], vn], axis=1)
                fn = _safe_rhs(model, yn)
                proj[acc] += dv
            t[acc] = ti[accept] + hs[accept]
            # land exactly on the window end
            at_end = hi[accept] >= remaining[accept]
            t[acc[at_end]] = t_end
            y[acc] = yn
            f[acc] = fn
            steps[acc] += 1
            records_idx.append(acc)
            records_t.append(t[acc].copy())
            records_y.append(yn.copy())
            records_f.append(fn.copy())
            done = at_end
            reason_done = acc[done]
            active[reason_done] = False
            bad = ~np.all(np.isfinite(fn), axis=1)
            reason[acc[bad]] = NON_FINITE
            active[acc[bad]] = False
            if box is not None:
                xs = yn[:, :n]
                out = np.any((xs < box[0]) | (xs > box[1]), axis=1) & active[acc]
                reason[acc[out]] = LEFT_BOX
                active[acc[out]] = False
            over = (steps[acc] >= cfg.max_steps) & active[acc]
            reason[acc[over]] = MAX_STEPS
            active[acc[over]] = False
        rej = idx[~accept]
        if rej.size:
            nonfinite_fail = ~finite[~accept]
            if not cfg.adaptive:
                reason[rej] = NON_FINITE
                active[rej] = False
            tiny = h_new[~accept] < 1e-14 * np.maximum(1.0, np.abs(ti[~accept]))
            reason[rej[tiny]] = np.where(nonfinite_fail[tiny], NON_FINITE, STEP_UNDERFLOW)
            active[rej[tiny]] = False
        h[idx] = np.maximum(h_new, 0.0)
    return records_idx, records_t, records_y, records_f, reason, proj


def _safe_rhs(model, y):
    try:
        return _rhs_batch(model, y)
    except ChartError:
        # evaluate row by row so that only the offending rays are poisoned
        out = np.full_like(y, np.nan)
        for r in range(y.shape[0]):
            try:
                out[r] = _rhs_batch(model, y[r:r + 1])[0]
            except (ChartError, FloatingPointError, ValueError):
                pass
        return out


def integrate_batch(model: MetricModel, x0: np.ndarray, v0: np.ndarray, window: Sequence[float],
                    cfg: Optional[IntegratorConfig] = None) -> list[Trajectory]:
    """Integrate one geodesic per row of ``x0``/``v0`` over ``window``."""
    cfg = cfg or IntegratorConfig()
    t_min, t_max = (float(w) for w in window)
    if not t_min <= 0.0 <= t_max:
        raise IntegrationError(f"window [{t_min}, {t_max}] must contain 0")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    if x0.shape != v0.shape or x0.shape[1] != model.n:
        raise ChartError(f"initial data must have shape (k, {model.n})")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(v0))):
        raise IntegrationError("initial data must be finite")
    npts = x0.shape[0]
    n = model.n
    y0 = np.concatenate([x0, v0], axis=1)
    f0 = _safe_rhs(model, y0)

    fwd = _march(model, y0, t_max, cfg, +1.0)
    bwd = _march(model, y0, t_min, cfg, -1.0)

    def gather(rec):
        idx, ts, ys, fs = rec[:4]
        if not idx:
            return (np.empty(0, int), np.empty(0), np.empty((0, 2 * n)), np.empty((0, 2 * n)))
        return (np.concatenate(idx), np.concatenate(ts), np.concatenate(ys), np.concatenate(fs))

    fi, ft, fy, ff = gather(fwd)
    bi, bt, by, bf = gather(bwd)
    all_i = np.concatenate([bi, np.arange(npts), fi])
    all_t = np.concatenate([bt, np.zeros(npts), ft])
    all_y = np.concatenate([by, y0, fy])
    all_f = np.concatenate([bf, f0, ff])
    order = np.lexsort((all_t, all_i))
    all_i, all_t, all_y, all_f = all_i[order], all_t[order], all_y[order], all_f[order]
    bounds = np.searchsorted(all_i, np.arange(npts + 1))

    trajs = []
    for r in range(npts):
        sl = slice(bounds[r], bounds[r + 1])
        ts = all_t[sl]
        ys = all_y[sl]
        fs = all_f[sl]
        keep = np.all(np.isfinite(ys), axis=1) & np.all(np.isfinite(fs), axis=1)
        # contiguous finite run around t = 0
        zero = int(np.searchsorted(ts, 0.0))
        lo = zero
        while lo > 0 and keep[lo - 1]:
            lo -= 1
        hi = zero
        while hi + 1 < len(ts) and keep[hi + 1]:
            hi += 1
        sel = slice(lo, hi + 1)
        reason_b = bwd[4][r]
        reason_f = fwd[4][r]
        if not keep[zero]:
            reason_b = reason_f = NON_FINITE
        trajs.append(Trajectory(t=ts[sel].copy(), x=ys[sel, :n].copy(), v=ys[sel, n:].copy(),
                                a=fs[sel, n:].copy(), window=(t_min, t_max),
                                termination_backward=str(reason_b),
                                termination_forward=str(reason_f),
                                null_projection=float(fwd[5][r] + bwd[5][r])))
    return trajs


def integrate(model: MetricModel, x0, v0, window: Sequence[float],
              cfg: Optional[IntegratorConfig] = None) -> Trajectory:
    x0 = _point(model, x0)
    v0 = np.asarray(v0, dtype=float)
    return integrate_batch(model, x0[None, :], v0[None, :], window, cfg)[0]


def exp_map(model: MetricModel, x, v, cfg: Optional[IntegratorConfig] = None) -> np.ndarray:
    """``exp_x(v)``: the point at parameter 1 of the geodesic with velocity ``v``."""
    traj = integrate(model, x, v, (0.0, 1.0), cfg)
    if traj.t_hi < 1.0:
        raise DomainError(f"geodesic terminated at t = {traj.t_hi!r} ({traj.termination}); "
                          "v lies outside the numerically reachable domain of exp")
    return traj.sample(1.0).x


def sample(traj: Trajectory, t: float) -> GeodesicState:
    return traj.sample(t)
