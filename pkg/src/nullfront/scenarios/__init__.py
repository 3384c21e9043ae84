"""Configured scenarios: null cones, the flying saucer and the degenerate front."""
from .config import ConfigError, apply_overrides, load_config
from .geometry import CuspLocus, circle_fit, detect_cusp_locus, sphere_fit
from .runner import (Check, InvariantReport, ScenarioRun, run_scenario, saucer_config,
                     scenario_degenerate, scenario_null_cone, scenario_saucer)

__all__ = [
    "Check", "ConfigError", "CuspLocus", "InvariantReport", "ScenarioRun", "apply_overrides",
    "circle_fit", "detect_cusp_locus", "load_config", "run_scenario", "saucer_config",
    "scenario_degenerate", "scenario_null_cone", "scenario_saucer", "sphere_fit",
]
