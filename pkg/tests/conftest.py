import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import Config  # noqa: E402
from simulation.groundstate import HELIUM4_MASS, PhysicalParams  # noqa: E402
from simulation.lattice import build_lattice  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run acceptance-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    """Runs and logs go to the test's tmp_path."""
    monkeypatch.setattr(Config, 'OUTPUT_ROOT', str(tmp_path / 'runs'))
    return tmp_path


@pytest.fixture
def he_params():
    """Main-scenario physics at the desk-scale trap."""
    return PhysicalParams(
        mass=HELIUM4_MASS,
        a00=5.3e-9,
        a11=7.51e-9,
        trap_frequencies=tuple(2.0 * np.pi * f for f in (376.0, 1150.0, 1150.0)),
        collision_velocity=0.092,
        peak_density=2.5e19,
    )


@pytest.fixture
def small_lattice():
    return build_lattice((16, 8, 8), (40e-6, 16e-6, 16e-6))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
