"""Scenario configuration: JSON files, dotted overrides and object builders."""
from __future__ import annotations

import copy
import json
import math
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .. import metric_dsl as dsl
from ..geodesic import IntegratorConfig
from ..grids import LGrid
from ..hypersurface import GraphSlice, slice_as_immersion

SHIPPED = ("cone", "cone_past", "cone_conformal", "expanding_circle", "saucer", "degenerate")


class ConfigError(ValueError):
    pass


def shipped_path(name: str):
    return resources.files("nullfront.scenarios").joinpath("configs", f"{name}.json")


def load_config(source) -> dict:
    """Read a config from a path, or ``builtin:NAME`` for a shipped scenario."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    text_src = str(source)
    if text_src.startswith("builtin:"):
        name = text_src.split(":", 1)[1]
        if name not in SHIPPED:
            raise ConfigError(f"unknown builtin scenario {name!r}; choose from {', '.join(SHIPPED)}")
        text = shipped_path(name).read_text()
    else:
        path = Path(text_src)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{text_src}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{text_src}: top level must be an object")
    return cfg


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _split_path(node, parts: list) -> list:
    """Group dotted parts so that literal keys containing dots (threshold names) stay whole."""
    out = []
    i = 0
    while i < len(parts):
        if isinstance(node, dict):
            if out and out[-1] == "thresholds":
                out.append(".".join(parts[i:]))
                break
            for j in range(len(parts), i, -1):
                cand = ".".join(parts[i:j])
                if j - i > 1 and cand in node:
                    out.append(cand)
                    i = j
                    break
            else:
                out.append(parts[i])
                i += 1
            node = node.get(out[-1]) if isinstance(node, dict) else None
        else:
            out.append(parts[i])
            i += 1
            try:
                node = node[int(out[-1])] if isinstance(node, list) else None
            except (ValueError, IndexError):
                node = None
    return out


def apply_overrides(cfg: dict, sets) -> dict:
    """Apply ``key.sub.0=value`` overrides; values are JSON when they parse as JSON."""
    cfg = copy.deepcopy(cfg)
    for item in sets or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        parts = _split_path(cfg, parts)
        node = cfg
        for p in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(p)]
                except (ValueError, IndexError):
                    raise ConfigError(f"override {key!r}: bad list index {p!r}") from None
            else:
                node = node.setdefault(p, {})
            if not isinstance(node, (dict, list)):
                raise ConfigError(f"override {key!r}: {p!r} is not a container")
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = _parse_value(raw)
            except (ValueError, IndexError):
                raise ConfigError(f"override {key!r}: bad list index {last!r}") from None
        else:
            node[last] = _parse_value(raw)
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    return cfg[key]


def build_metric(spec):
    """``"minkowski(m)"``, ``{"diag": [...]}``, ``{"entries": {"i,j": ...}, "dim": m}``
    or ``{"conformal": omega, "dim": m}``; optional ``params``, ``orientation``,
    ``sample_points``."""
    try:
        if isinstance(spec, str):
            return dsl.compile_metric(spec)
        if not isinstance(spec, dict):
            raise ConfigError("metric must be a string or an object")
        params = spec.get("params", {})
        kw = {}
        if "orientation" in spec:
            kw["orientation_exprs"] = tuple(spec["orientation"])
        if "sample_points" in spec:
            kw["sample_points"] = tuple(tuple(float(c) for c in p) for p in spec["sample_points"])
        if "diag" in spec:
            prog = dsl.MetricProgram.diag(*spec["diag"], params=params, **kw)
        elif "conformal" in spec:
            prog = dsl.MetricProgram.conformal(spec["conformal"], int(_require(spec, "dim")),
                                               params=params, **kw)
        elif "entries" in spec:
            entries = {}
            for key, val in spec["entries"].items():
                i, j = (int(s) for s in str(key).split(","))
                entries[(i, j)] = val
            prog = dsl.MetricProgram(dim=int(_require(spec, "dim")), entries=entries,
                                     params=params, **kw)
        else:
            raise ConfigError("metric object needs one of 'diag', 'conformal', 'entries'")
        return dsl.compile_metric(prog)
    except dsl.DSLError as exc:
        raise ConfigError(f"metric: {exc}") from None


def build_surface(spec: dict, m: int):
    sl = build_slice(spec, m, "surface")
    return sl, slice_as_immersion(sl)


def build_slice(spec, m: int, where: str = "slice") -> GraphSlice:
    if isinstance(spec, (str, int, float)):
        spec = {"f": str(spec)}
    sl = GraphSlice(str(_require(spec, "f")), m, dict(spec.get("params", {})))
    try:
        sl.expr
    except dsl.DSLError as exc:
        raise ConfigError(f"{where} f={spec['f']!r}: {exc}") from None
    return sl


def build_grid(spec: dict) -> LGrid:
    kind = _require(spec, "kind")
    if kind == "circle":
        return LGrid.circle(int(_require(spec, "n")))
    if kind == "sphere":
        eps = spec.get("eps_pole")
        return LGrid.sphere(int(_require(spec, "n_lat")), int(_require(spec, "n_lon")),
                            None if eps is None else float(eps))
    if kind == "rectangle":
        bounds, counts, periodic = [], [], []
        for ax in _require(spec, "axes"):
            per = bool(ax.get("periodic", False))
            lo = float(ax.get("min", 0.0 if per else math.nan))
            hi = float(ax.get("max", 2 * math.pi if per else math.nan))
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigError(f"grid axis {ax} needs finite min < max")
            bounds.append((lo, hi))
            counts.append(int(_require(ax, "n")))
            periodic.append(per)
        return LGrid.rectangle(bounds, counts, periodic)
    raise ConfigError(f"unknown grid kind {kind!r}")


def _l_funcs(exprs, k: int, params: dict, what: str):
    names = [f"l{i}" for i in range(k)]
    try:
        parsed = [dsl.parse_expr(str(e), variables=names, params=params) for e in exprs]
    except dsl.DSLError as exc:
        raise ConfigError(f"legendrian {what}: {exc}") from None

    def fn(pts):
        pts = np.asarray(pts, dtype=float)
        env = dict(params)
        for i, nm in enumerate(names):
            env[nm] = pts[..., i]
        return np.stack([np.broadcast_to(dsl.eval_array(e, env), pts.shape[:-1]) for e in parsed],
                        axis=-1)

    return fn


def legendrian_functions(spec: dict, k: int, m: int):
    """``(lam, X)`` callables for ``explicit`` and ``normal_lift`` specs (X is None for the latter)."""
    params = dict(spec.get("params", {}))
    lam = spec.get("lambda")
    if lam is None or len(lam) != m:
        raise ConfigError(f"legendrian 'lambda' needs {m} expressions")
    lam_fn = _l_funcs(lam, k, params, "lambda")
    X_fn = None
    if "X" in spec:
        if len(spec["X"]) != m:
            raise ConfigError(f"legendrian 'X' needs {m} expressions")
        X_fn = _l_funcs(spec["X"], k, params, "X")
    return lam_fn, X_fn


def build_integrator(spec: dict) -> IntegratorConfig:
    spec = dict(spec or {})
    if "box" in spec and spec["box"] is not None:
        spec["box"] = (tuple(spec["box"][0]), tuple(spec["box"][1]))
    try:
        return IntegratorConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integrator: {exc}") from None


def build_window(spec: dict) -> tuple:
    return (float(_require(spec, "t_min")), float(_require(spec, "t_max")), int(_require(spec, "steps")))
