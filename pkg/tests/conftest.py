import numpy as np
import pytest

from ddcre.elasticity import LoadSpec, hooke_plane_stress

E_MODULUS, POISSON = 2000.0, 0.3


@pytest.fixture(scope="session")
def hooke():
    return hooke_plane_stress(E_MODULUS, POISSON)


@pytest.fixture(scope="session")
def loads():
    return LoadSpec()


def affine_field(points):
    """Linear displacement used for patch tests."""
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([1e-3 * (1.0 + 2.0 * x - 0.5 * y), 1e-3 * (-0.3 + 0.7 * x + 1.5 * y)])


AFFINE_STRAIN = np.array([2e-3, 1.5e-3, 0.2e-3])   # exx, eyy, 2 exy


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
