"""Running configured scenarios end to end and collecting invariant checks."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import __version__
from ..front import NullCongruence, build_front, lift_ranks, mapped_null_residual
from ..grids import LGrid
from ..hypersurface import GraphSlice
from ..legendrian import (LegendrianError, fiber_legendrian, legendrian_residuals, make_legendrian,
                          normal_lifts)
from ..slicer import (fill_phi, find_crossings, sliced_legendrian_residual,
                      sliced_ranks, transversality_check)
from . import config as C
from .geometry import (CuspLocus, circle_fit, closest_component, detect_cusp_locus,
                       largest_component, sphere_fit)

_SPECIFIC = re.compile(r"^slice\[(\d+)\]\.(\w+)$")


@dataclass
class Check:
    name: str
    max: float
    rms: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.max) and self.max <= self.threshold)

    def to_dict(self) -> dict:
        return {"name": self.name, "max": _num(self.max), "rms": _num(self.rms),
                "threshold": _num(self.threshold), "pass": self.passed}


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class InvariantReport:
    scenario: str
    checks: list
    version: str = __version__
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "checks": [c.to_dict() for c in self.checks],
                "version": self.version, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class SliceRun:
    index: int
    slice: GraphSlice
    sliced: object
    residual: object
    transversality: object
    ranks: np.ndarray
    sphere: Optional[object] = None
    cusp: Optional[CuspLocus] = None
    cusp_component: int = -1
    cusp_fit: Optional[object] = None


@dataclass
class ScenarioRun:
    name: str
    cfg: dict
    model: object
    nc: NullCongruence
    front: object
    lift_ranks: np.ndarray
    lm: object = None
    slices: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    report: Optional[InvariantReport] = None


def _stats(values) -> tuple:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return 0.0, 0.0
    return float(np.max(v)), float(np.sqrt(np.mean(v * v)))


def _legendrian(cfg: dict, model, mu, grid: LGrid):
    spec = C._require(cfg, "legendrian")
    kind = C._require(spec, "type")
    m = model.dim
    try:
        if kind == "fiber":
            return fiber_legendrian(model, mu, spec.get("point", [0.0] * m), grid)
        lam_fn, X_fn = C.legendrian_functions(spec, grid.ndim, m)
        if kind == "normal_lift":
            plus, minus = normal_lifts(model, mu, grid, lam_fn, step=float(spec.get("step", 1e-6)),
                                       hint=spec.get("hint"))
            return minus if spec.get("sign", "+") == "-" else plus
        if kind == "explicit":
            if X_fn is None:
                raise C.ConfigError("explicit legendrian needs 'X'")
            return make_legendrian(model, mu, grid, lam_fn, X_fn)
    except LegendrianError as exc:
        raise C.ConfigError(f"legendrian: {exc}") from None
    raise C.ConfigError(f"unknown legendrian type {kind!r}")


def _degenerate_congruence(cfg: dict, model, grid: LGrid, window) -> NullCongruence:
    """``nu(y, t) = (t, 0, ..., 0, t)``: a null line composed with a projection."""
    n = model.n
    times = np.linspace(window[0], window[1], window[2] + 1)
    nu = np.zeros(grid.shape + (len(times), n))
    nu[..., 0] = times
    nu[..., -1] = times
    N = np.zeros_like(nu)
    N[..., 0] = 1.0
    N[..., -1] = 1.0
    return NullCongruence.from_samples(model, grid, times, nu, N)


def run_scenario(cfg: dict, stages=("front", "slices")) -> ScenarioRun:
    """Build and evaluate one scenario; ``report`` holds a check per threshold key."""
    name = str(cfg.get("name", "scenario"))
    kind = cfg.get("scenario", "front")
    model = C.build_metric(C._require(cfg, "metric"))
    m = model.dim
    grid = C.build_grid(C._require(cfg, "l_grid"))
    window = C.build_window(C._require(cfg, "window"))
    expect = cfg.get("expect", {})
    metrics = {}
    meta = {"m": m, "grid": {"kind": grid.kind, "shape": list(grid.shape)},
            "window": list(window)}

    lm = None
    if kind == "degenerate":
        if grid.ndim != m - 1:
            raise C.ConfigError(f"degenerate scenario needs an {m - 1}-dimensional grid")
        nc = _degenerate_congruence(cfg, model, grid, window)
    else:
        if grid.ndim != m - 1:
            raise C.ConfigError(f"L-grid has dimension {grid.ndim}, expected {m - 1}")
        _, mu = C.build_surface(cfg.get("surface", {"f": "0"}), m)
        lm = _legendrian(cfg, model, mu, grid)
        nc = build_front(model, mu, lm, window, C.build_integrator(cfg.get("integrator")))
        lres = legendrian_residuals(lm)
        metrics["legendrian.residual"] = _stats(lres[grid.interior_mask()])
        bad = [t for t in nc.terminations if t != ("window_end", "window_end")]
        metrics["front.incomplete_rays"] = (float(len(bad)), float(len(bad)))
        meta["terminations"] = {f"{b}/{f}": nc.terminations.count((b, f))
                                for b, f in sorted(set(nc.terminations))}

    fr = mapped_null_residual(nc)
    metrics["front.residual_orth"] = (fr.orth_max, fr.orth_rms)
    metrics["front.residual_null"] = (fr.null_max, fr.null_rms)
    metrics["front.tangency"] = (fr.tangency_max, fr.tangency_rms)
    ranks = lift_ranks(nc)
    rk = ranks[ranks >= 0]
    want = int(expect.get("lift_rank", m))
    metrics["front.lift_rank_error"] = _stats(np.abs(rk - want))
    meta["lift_rank"] = {"min": int(rk.min()) if rk.size else None,
                         "max": int(rk.max()) if rk.size else None,
                         "immersion": bool(rk.size and np.all(rk == m))}

    run = ScenarioRun(name=name, cfg=cfg, model=model, nc=nc, front=fr, lift_ranks=ranks, lm=lm)
    if "slices" in stages:
        _run_slices(run, cfg, metrics, meta)
    run.metrics = metrics
    meta["measurements"] = {k: {"max": _num(v[0]), "rms": _num(v[1])} for k, v in metrics.items()}
    run.report = InvariantReport(scenario=name, checks=_checks(cfg.get("thresholds", {}), metrics),
                                 metadata=meta)
    return run


def _run_slices(run: ScenarioRun, cfg: dict, metrics: dict, meta: dict) -> None:
    model, nc = run.model, run.nc
    m = model.dim
    cusp_cfg = cfg.get("cusps")
    slice_meta = []
    for i, spec in enumerate(cfg.get("slices", [])):
        sl = C.build_slice(spec, m)
        exp = spec.get("expect", {}) if isinstance(spec, dict) else {}
        S = fill_phi(model, nc, find_crossings(nc, sl, float(cfg.get("cross_tol", 1e-10))))
        tr = transversality_check(nc, S, float(cfg.get("trans_tol", 1e-2)))
        info = {"f": sl.text, "n_crossings": S.n_crossings, "diagnostics": list(S.diagnostics)}
        key = f"slice[{i}]"
        missing = sum(1 for c in S.crossings if not c)
        metrics[f"{key}.missing_crossings"] = (float(missing), float(missing))
        if S.n_crossings == 0:
            slice_meta.append(info)
            run.slices.append(SliceRun(i, sl, S, None, tr, np.empty(0)))
            continue
        res = sliced_legendrian_residual(model, S, nc)
        ranks = sliced_ranks(S)
        rk = ranks[ranks >= 0]
        metrics[f"{key}.residual"] = (res.max, res.rms)
        metrics[f"{key}.membership"] = (res.membership, res.membership)
        metrics[f"{key}.inv_phi_ratio"] = (1 / res.phi_ratio_min if res.phi_ratio_min > 0 else math.inf,) * 2
        metrics[f"{key}.inv_transversality"] = (1 / tr.min_margin if tr.min_margin > 0 else math.inf,) * 2
        want = int(exp.get("sheet_rank", m - 1))
        metrics[f"{key}.rank_error"] = _stats(np.abs(rk - want))
        if res.t_jump_bound > 0:
            metrics[f"{key}.t_jump_ratio"] = (res.max_t_jump / res.t_jump_bound,) * 2
        info.update({"phi_ratio_min": res.phi_ratio_min, "transversality_min": tr.min_margin,
                     "sheet_rank": {"min": int(rk.min()) if rk.size else None,
                                    "max": int(rk.max()) if rk.size else None}})
        run_i = SliceRun(i, sl, S, res, tr, ranks)
        pts = S.sheet(0)["point"][S.sheet(0)["valid"]][:, :m]
        if "radius" in exp or "center" in exp:
            fit = sphere_fit(pts)
            run_i.sphere = fit
            info["sphere"] = {"center": fit.center.tolist(), "radius": fit.radius, "rms": fit.rms}
            if "radius" in exp:
                err = abs(fit.radius - float(exp["radius"]))
                metrics[f"{key}.sphere_radius_error"] = (err, err)
            if "center" in exp:
                err = float(np.max(np.abs(fit.center - np.asarray(exp["center"], dtype=float))))
                metrics[f"{key}.sphere_center_error"] = (err, err)
            metrics[f"{key}.sphere_rms"] = (fit.rms, fit.rms)
        if cusp_cfg:
            run_i.cusp = detect_cusp_locus(S, float(cusp_cfg.get("cusp_tol", 0.1)),
                                           float(cusp_cfg.get("collapse_tol", 1e-6)))
        run.slices.append(run_i)
        slice_meta.append(info)

    if cusp_cfg:
        _cusp_metrics(run, cfg, metrics, slice_meta)
    meta["slices"] = slice_meta


def _cusp_metrics(run: ScenarioRun, cfg: dict, metrics: dict, slice_meta: list) -> None:
    """Fit the cusp edge on every slice.

    The edge is followed through the slices in order of their median crossing
    time: each slice uses the component nearest (in L) to the edge chosen on
    the previous one, starting from the largest component of the reference
    slice.
    """
    ref_idx = int(cfg["cusps"].get("reference_slice", 0))
    by_time = sorted(run.slices, key=lambda s: float(np.nanmedian(s.sliced.sheet(0)["t_star"]))
                     if s.sliced.n_crossings else math.inf)
    pos = next((q for q, s in enumerate(by_time) if s.index == ref_idx), 0)
    chosen = {}
    for chain in (by_time[pos:], by_time[pos::-1]):
        prev = None
        for s in chain:
            if s.cusp is None or s.cusp.empty:
                continue
            if s.index in chosen:
                k = chosen[s.index]
            elif prev is None:
                k = largest_component(s.cusp)
            else:
                k = closest_component(run.nc.grid, s.cusp, prev)
            chosen[s.index] = k
            prev = s.cusp.l_params[s.cusp.components[k]]
    for s in run.slices:
        key = f"slice[{s.index}]"
        spec = cfg["slices"][s.index]
        exp = spec.get("expect", {}) if isinstance(spec, dict) else {}
        info = slice_meta[s.index]
        if s.index not in chosen:
            info["cusp"] = {"n_flagged": 0}
            if "cusp_radius" in exp:
                metrics[f"{key}.cusp_radius_error"] = (math.inf, math.inf)
            if "cusp_height" in exp:
                metrics[f"{key}.cusp_height_error"] = (math.inf, math.inf)
            continue
        k = chosen[s.index]
        s.cusp_component = k
        P = s.cusp.component_points(k)
        info["cusp"] = {"n_flagged": len(s.cusp.indices), "n_components": len(s.cusp.components),
                        "edge_size": len(s.cusp.components[k])}
        if P.shape[1] != 3 or len(P) < 3:
            continue
        fit = circle_fit(P)
        s.cusp_fit = fit
        info["cusp"].update({"center": fit.center.tolist(), "radius": fit.radius, "rms": fit.rms,
                             "plane_rms": fit.plane_rms})
        if "cusp_radius" in exp:
            err = abs(fit.radius - float(exp["cusp_radius"]))
            metrics[f"{key}.cusp_radius_error"] = (err, err)
        if "cusp_height" in exp:
            h = np.abs(P[:, -1] - float(exp["cusp_height"]))
            metrics[f"{key}.cusp_height_error"] = (max(abs(float(fit.center[-1]) - float(exp["cusp_height"])),
                                                       float(h.max())),
                                                   float(np.sqrt(np.mean(h * h))))


def _checks(thresholds: dict, metrics: dict) -> list:
    """One check per threshold key; ``slice.X`` expands over every slice having ``X``."""
    resolved = {}
    for key, value in thresholds.items():
        try:
            thr = float(value)
        except (TypeError, ValueError):
            raise C.ConfigError(f"threshold {key!r} is not a number") from None
        if not thr > 0:
            raise C.ConfigError(f"threshold {key!r} must be positive")
        if key.startswith("slice."):
            suffix = key[len("slice."):]
            hits = [k for k in metrics if _SPECIFIC.match(k) and _SPECIFIC.match(k).group(2) == suffix]
            if not hits and not any(_SPECIFIC.match(k) for k in metrics):
                continue
            if not hits:
                raise C.ConfigError(f"threshold {key!r} matches no computed quantity")
            for h in hits:
                resolved.setdefault(h, thr)
        else:
            if key not in metrics:
                raise C.ConfigError(f"threshold {key!r} matches no computed quantity")
            resolved[key] = thr
    for key, value in thresholds.items():
        if _SPECIFIC.match(key):
            resolved[key] = float(value)
    order = list(metrics)
    return [Check(k, metrics[k][0], metrics[k][1], resolved[k])
            for k in sorted(resolved, key=order.index)]


# convenience constructors -------------------------------------------------------------

def scenario_null_cone(m: int = 3, vertex=None, window=(0.0, 3.0, 30), slices=(2.0,),
                       metric: Optional[object] = None, n_lat: int = 40, n_lon: int = 80,
                       n_circle: int = 128, thresholds: Optional[dict] = None) -> ScenarioRun:
    """Fiber Legendrian over ``vertex`` in the ``t = 0`` slice, sliced at ``t = tau``."""
    vertex = [0.0] * m if vertex is None else list(vertex)
    grid = ({"kind": "circle", "n": n_circle} if m == 2
            else {"kind": "sphere", "n_lat": n_lat, "n_lon": n_lon})
    slc = []
    for tau in slices:
        e = {"radius": abs(float(tau))}
        if metric is None:
            e["center"] = vertex
        slc.append({"f": repr(float(tau)), "expect": e})
    cfg = {"name": "null_cone", "scenario": "cone", "metric": metric or f"minkowski({m})",
           "surface": {"f": "0"}, "legendrian": {"type": "fiber", "point": vertex},
           "l_grid": grid, "window": {"t_min": window[0], "t_max": window[1], "steps": window[2]},
           "slices": slc, "thresholds": thresholds or {}}
    return run_scenario(cfg)


SAUCER_PROFILES = {
    "degenerate": {
        "lambda": ["(1 - l0^2)*cos(l1)", "(1 - l0^2)*sin(l1)", "0.8*l0^5"],
        "X": ["4*l0^3*cos(l1)", "4*l0^3*sin(l1)", "2"],
    },
    "generic": {
        "lambda": ["(1 - l0^2)*cos(l1)", "(1 - l0^2)*sin(l1)", "l0^3"],
        "X": ["3*l0*cos(l1)", "3*l0*sin(l1)", "2"],
    },
}


def saucer_config(taus=(0.0, 0.5, 1.0, 2.0), profile: str = "degenerate", n_u: int = 100,
                  n_theta: int = 128, steps_per_unit: int = 10, thresholds: Optional[dict] = None) -> dict:
    if profile not in SAUCER_PROFILES:
        raise C.ConfigError(f"unknown saucer profile {profile!r}")
    t_max = max(max(taus), 0.0) + 0.5
    slc = [{"f": repr(float(t)), "expect": {"cusp_radius": 1.0, "cusp_height": float(t)}} for t in taus]
    return {"name": f"saucer_{profile}", "scenario": "saucer", "metric": "minkowski(3)",
            "surface": {"f": "0"},
            "legendrian": {"type": "explicit", **SAUCER_PROFILES[profile]},
            "l_grid": {"kind": "rectangle", "axes": [{"min": -0.9, "max": 0.9, "n": n_u},
                                                     {"periodic": True, "n": n_theta}]},
            "window": {"t_min": 0.0, "t_max": t_max, "steps": int(round(steps_per_unit * t_max))},
            "slices": slc, "cusps": {"cusp_tol": 0.1, "collapse_tol": 1e-6, "reference_slice": 0},
            "thresholds": thresholds or {}}


def scenario_saucer(taus=(0.0, 0.5, 1.0, 2.0), profile: str = "degenerate", n_u: int = 100,
                    n_theta: int = 128, thresholds: Optional[dict] = None) -> ScenarioRun:
    """Rotationally symmetric saucer in the ``t = 0`` slice of Minkowski 3+1."""
    return run_scenario(saucer_config(taus, profile, n_u, n_theta, thresholds=thresholds))


def scenario_degenerate(m: int = 3, n: int = 5, window=(0.0, 2.0, 20), slices=("1",),
                        thresholds: Optional[dict] = None) -> ScenarioRun:
    """``nu(y, t) = (t, 0, ..., 0, t)`` over a cube of ``y`` values."""
    cfg = {"name": "degenerate", "scenario": "degenerate", "metric": f"minkowski({m})",
           "l_grid": {"kind": "rectangle", "axes": [{"min": 0.0, "max": 1.0, "n": n}] * (m - 1)},
           "window": {"t_min": window[0], "t_max": window[1], "steps": window[2]},
           "expect": {"lift_rank": 1},
           "slices": [{"f": f, "expect": {"sheet_rank": 0}} for f in slices],
           "thresholds": thresholds or {}}
    return run_scenario(cfg)
