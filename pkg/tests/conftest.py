import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from sectionlab.core.grid import Grid
from sectionlab.core.normalization import ProblemInstance
from sectionlab.core.potentials import make_potential
from sectionlab.core.sections import require_compact, section

MINIMAL_CONFIG = """\
seed = 7

[grid]
dim = 2
resolution = 64
half_width = 1.5

[potential]
family = "quadratic"

[experiment]
name = "measure"
samples = 4
calibration = 3
solution_family = "harmonic"
t0 = 0.2
"""


@pytest.fixture
def temp_dir():
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture
def minimal_config(temp_dir):
    path = temp_dir / "minimal.toml"
    path.write_text(MINIMAL_CONFIG + f'\n[output]\ndirectory = "{(temp_dir / "runs").as_posix()}"\n')
    return path


@pytest.fixture(scope="session")
def grid():
    return Grid.box(2, 1.5, 64)


@pytest.fixture(scope="session")
def coarse_grid():
    return Grid.box(2, 1.5, 32)


@pytest.fixture(scope="session")
def quadratic_u(grid):
    return make_potential("quadratic", grid)


@pytest.fixture(scope="session")
def cosine_u(grid):
    return make_potential("cosine", grid, eta=0.3, omega=1.5)


@pytest.fixture(scope="session")
def origin():
    return np.zeros(2)


@pytest.fixture(scope="session")
def quadratic_instance(quadratic_u, origin):
    """Linearized operator for u = |x|^2/2 on S(0, 0.8), t0 = 0.2."""
    S4 = require_compact(section(quadratic_u, origin, 0.8))
    return ProblemInstance.linearized(quadratic_u, S4, 1.0, 1.0, p=6.0)
