import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mfgtools.core import bundled


@pytest.fixture(scope="session")
def rps():
    return bundled("rps")


@pytest.fixture(scope="session")
def crowd():
    return bundled("crowd")


@pytest.fixture(scope="session")
def crowd_jump():
    return bundled("crowd_jump")


@pytest.fixture(scope="session")
def anticoord():
    return bundled("anticoord")


@pytest.fixture(scope="session")
def lottery():
    return bundled("lottery")


@pytest.fixture(scope="session")
def smooth2():
    return bundled("smooth2")


@pytest.fixture(scope="session")
def iid2():
    return bundled("iid2")
