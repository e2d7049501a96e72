import sys

import numpy as np
import pytest

from tpavc.grid.topology import desk_feeder, transfer_feeder
from tpavc.profiles import SyntheticParams, generate_synthetic_year


@pytest.fixture(scope="session")
def desk():
    return desk_feeder()


@pytest.fixture(scope="session")
def year(desk):
    return generate_synthetic_year(desk, seed=0)


@pytest.fixture(scope="session")
def short_profiles(desk):
    """January plus February: two complete months, quick to roll out."""
    return generate_synthetic_year(desk, SyntheticParams(days=59), seed=3)


@pytest.fixture(scope="session")
def transfer_year():
    topo = transfer_feeder()
    return topo, generate_synthetic_year(topo, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    verdicts = getattr(sys.modules.get("test_acceptance"), "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
