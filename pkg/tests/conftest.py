import json
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"

CRITERIA = {
    1: "null-norm conservation",
    2: "front orthogonality residual",
    3: "cone slice sphere geometry",
    4: "sliced Legendrian residual",
    5: "immersion ranks",
    6: "saucer cusp edge",
    7: "determinism",
    8: "oracle equivalence",
}


def pytest_configure(config):
    config._acceptance = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        parts = results.get(k)
        if parts is None:
            terminalreporter.write_line(f"criterion {k} NOT RUN: {CRITERIA[k]}")
            continue
        ok = all(p[3] for p in parts)
        detail = "; ".join(f"{name} {value:.3g} {'<=' if le else '>='} {bound:.3g}"
                           + ("" if good else " FAILED")
                           for name, value, bound, good, le in parts)
        terminalreporter.write_line(f"criterion {k} {'PASS' if ok else 'FAIL'}: {CRITERIA[k]} ({detail})")


@pytest.fixture
def acceptance(request):
    """``record(k, name, value, bound, le=True)`` stores one measured sub-check."""
    store = request.config._acceptance

    def record(k, name, value, bound, le=True):
        value = float(value)
        good = bool(np.isfinite(value) and (value <= bound if le else value >= bound))
        store.setdefault(k, []).append((name, value, float(bound), good, le))
        return good

    return record


@pytest.fixture(scope="session")
def derived():
    return json.loads((FIXTURES / "derived.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def shipped():
    from nullfront.scenarios import load_config, run_scenario
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_scenario(load_config(f"builtin:{name}"))
        return cache[name]

    return get


@pytest.fixture(scope="session")
def saucer_run(shipped):
    return shipped("saucer")


@pytest.fixture(scope="session")
def generic_saucer_run():
    from nullfront.scenarios import scenario_saucer
    return scenario_saucer(profile="generic")
