import numpy as np
import pytest

from plateforge.dataset import gaussian_strike
from plateforge.plate import PlateParams, build_basis


@pytest.fixture(scope="session")
def linear_params():
    return PlateParams(cnl_over_s0=0.0)


@pytest.fixture(scope="session")
def nonlinear_params():
    return PlateParams(cnl_over_s0=1.0e5)


@pytest.fixture(scope="session")
def basis(linear_params):
    return build_basis(linear_params)


@pytest.fixture(scope="session")
def nl_basis(nonlinear_params):
    return build_basis(nonlinear_params)


@pytest.fixture(scope="session")
def small_params():
    """Coarse 9 x 8 grid for fast structural tests."""
    return PlateParams(cnl_over_s0=1.0e5, Nx=9, Ny=8)


@pytest.fixture(scope="session")
def small_basis(small_params):
    return build_basis(small_params, 4, 3)


@pytest.fixture
def strike(linear_params):
    return gaussian_strike(linear_params, 10.0, 0.05, 0.17, 0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: printed live and repeated in the terminal summary."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(number, ok, detail):
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
