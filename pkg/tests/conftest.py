import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from filtrationlab.enlargement import azema_bundle  # noqa: E402
from filtrationlab.scenarios import WORKED_EXAMPLES, common_shock, generate  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def worked():
    """The six worked examples as (scenario, bundle) keyed by id."""
    out = {}
    for d in WORKED_EXAMPLES:
        sc = generate(d)
        out[sc.id] = (sc, azema_bundle(sc.pair))
    return out


@pytest.fixture(scope="session")
def small_randoms():
    """A modest mixed random corpus for module tests."""
    out = []
    for k in range(24):
        mode = ("none", "predictable", "inaccessible")[k % 3]
        sc = generate({"kind": "random", "params": {"seed": 500 + k, "T": 2 + k % 3,
                                                    "zero_mode": mode, "marks": k % 4 == 3}})
        out.append((sc, azema_bundle(sc.pair)))
    sc = common_shock()
    out.append((sc, azema_bundle(sc.pair)))
    return out


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid and rep.when == "call":
                name = nodeid.split("::")[-1]
                rows.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if rows:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(rows):
            num = int(name.split("_")[2])
            terminalreporter.write_line(f"criterion {num:2d}: {status}  ({name})")


def rng(seed=0):
    return np.random.default_rng(seed)
