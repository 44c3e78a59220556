import numpy as np
import pytest

from curvedstokes.geometry import CurvedMesh
from curvedstokes.mesh import generate_ball_mesh, generate_cube_mesh, single_tet_mesh
from curvedstokes.spaces import DofMap

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def ball0():
    return generate_ball_mesh(level=0)


@pytest.fixture(scope="session")
def ball1():
    return generate_ball_mesh(level=1)


@pytest.fixture(scope="session")
def cube2():
    return generate_cube_mesh(2)


@pytest.fixture(scope="session")
def tet1():
    return single_tet_mesh()


@pytest.fixture(scope="session")
def curved_ball0(ball0):
    """(cmesh, dofmap) for k = 2 on the curved level-0 ball."""
    return CurvedMesh(ball0, degree=2), DofMap(ball0, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
