import numpy as np
import pytest

from bcert import fixtures


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def room_net():
    return fixtures.room_network(3)


@pytest.fixture(scope="session")
def room_sub(room_net):
    return room_net.subsystem(room_net.ids[0])


@pytest.fixture(scope="session")
def two_mode_net():
    return fixtures.two_mode_network(2)


@pytest.fixture(scope="session")
def two_mode_sub(two_mode_net):
    return two_mode_net.subsystem(two_mode_net.ids[0])


@pytest.fixture(scope="session")
def plant():
    return fixtures.contraction_plant()
