import numpy as np
import pytest

from fedfcm.data import load_bundled_wdbc, partition
from fedfcm.federation import FederationConfig
from fedfcm.pso import PsoConfig


@pytest.fixture(scope="session")
def wdbc():
    return load_bundled_wdbc()


@pytest.fixture(scope="session")
def wdbc_partitions(wdbc):
    return partition(wdbc, 5, 0.8, seed=0)


@pytest.fixture
def quick_config():
    """Small swarm so protocol tests stay fast."""
    return FederationConfig(max_rounds=3, pso=PsoConfig(swarm_size=6, max_iterations=5), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    for module in list(sys.modules.values()):
        lines = getattr(module, "ACCEPTANCE_LINES", None)
        if lines:
            terminalreporter.section("acceptance criteria")
            for line in sorted(lines, key=lambda s: int(s.split()[1][1:])):
                terminalreporter.write_line(line)
