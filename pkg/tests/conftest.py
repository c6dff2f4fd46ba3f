import numpy as np
import pytest

from slct import _accel
from slct.grid import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_grid():
    return make_grid(8, 8, 16, 32, 1.0, 0.02)


@pytest.fixture
def small_grid():
    return make_grid(16, 16, 32, 64, 1.0, 0.008)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per kernel path and restore the default afterwards."""
    before = _accel.use_numba()
    _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend("numba" if before else "numpy")


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict line per acceptance criterion.

    Lines are echoed in the terminal summary so they survive output capture.
    """

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
