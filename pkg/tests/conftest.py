"""
Shared fixtures for the layerpot test suite
============================================

Run: pytest tests/

All numerical tests run on a reduced grid (r in [2^-5, 2^4], 8 shells per octave,
32 directions) so that every operator application stays cheap. The grid is built
once per session; near-field corrections are cached per grid, surface and kernel.

Tolerances on the reduced grid are looser than the full-grid acceptance values:
5e-2 where the CLI suites assert 1e-2 (flat oracle, flat gradient identities) or
2e-2 (flat inversion, tilted gradient identities). The full-grid values are asserted
by the CLI suites and exercised by tests/run_acceptance.py.
"""
import sys
from pathlib import Path

import pytest

# Add project root to path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from models.run_models import OperatorConfig  # noqa: E402
from services.catalog import make_field  # noqa: E402
from services.geometry import make_surface  # noqa: E402
from services.grid import AnnularGrid  # noqa: E402


@pytest.fixture(scope="session")
def grid():
    return AnnularGrid(dim=2, r_min=2.0 ** -5, r_max=2.0 ** 4, radial_per_octave=8, angular_count=32)


@pytest.fixture(scope="session")
def op_cfg():
    return OperatorConfig()


@pytest.fixture(scope="session")
def flat():
    return make_surface("flat")


@pytest.fixture(scope="session")
def tilt():
    return make_surface("tilt:0.02")


@pytest.fixture(scope="session")
def cone():
    return make_surface("cone:0.02")


@pytest.fixture(scope="session")
def gaussian(grid):
    return make_field("gaussian", grid)


@pytest.fixture(scope="session")
def bump(grid):
    return make_field("bump", grid)
