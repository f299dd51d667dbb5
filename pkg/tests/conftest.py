import numpy as np
import pytest

from blockcfd import generate_1d_tube
from blockcfd.density import DensityDiscretization, GasModel, make_boundaries, sod_initial

SOD_LEFT = {"rho": 1.0, "u": [0.0, 0.0, 0.0], "p": 1.0}
SOD_RIGHT = {"rho": 0.125, "u": [0.0, 0.0, 0.0], "p": 0.1}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def sod_setup(n=100, flux="roe", first_order=True, limiter="BarthJespersen"):
    """Sod tube discretization with farfield ends held at the initial states."""
    mesh = generate_1d_tube(n, 1.0)
    gas = GasModel()
    bcs = make_boundaries(mesh, gas, {"left": {"state": SOD_LEFT}, "right": {"state": SOD_RIGHT}})
    disc = DensityDiscretization(mesh, gas, flux, limiter, first_order, bcs)
    return disc, sod_initial(mesh, gas)


ACCEPTANCE_LINES = []


def _record_acceptance(number, ok, detail):
    line = f"acceptance {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture
def record_acceptance():
    """Store one pass/fail line for the terminal summary and echo it."""
    return _record_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
