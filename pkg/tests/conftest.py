import sys

import numpy as np
import pytest

from thetaprice import ExponentialCurve

STRIKES = np.arange(50.0, 85.0, 5.0)
MATURITIES = np.array([1.0 / 12.0, 0.3, 0.5, 1.0])
S0 = 50.0
H = 90.0


def table1_curve(q0=0.01):
    return ExponentialCurve(0.02, q0, 0.5 * H, 0.1, 0.2, horizon=1.0)


@pytest.fixture(scope="session")
def table1():
    return table1_curve()


@pytest.fixture(scope="session")
def table1_bundle(table1):
    from thetaprice.transform import build_bundle, solve_riccati

    return build_bundle(table1, solve_riccati(table1), T=1.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n} ({mod.TITLES[n]}): {'PASS' if ok else 'FAIL'} - {detail}")
