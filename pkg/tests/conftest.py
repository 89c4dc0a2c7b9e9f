import numpy as np
import pytest

from hankel import collect_certified_data
from lti import LtiSystem, random_system
from sample_counter import SampleCounter
from systems import batch_reactor_system, voltage_system


@pytest.fixture
def counter():
    return SampleCounter()


@pytest.fixture(scope="session")
def reactor():
    return batch_reactor_system()


@pytest.fixture(scope="session")
def reactor_partial():
    return batch_reactor_system(partial=True)


@pytest.fixture(scope="session")
def reactor_data(reactor):
    """Certified L=93 record of the state-feedback reactor at depth T=30."""
    return collect_certified_data(reactor, 30, seed=1, counter=SampleCounter())


@pytest.fixture(scope="session")
def reactor_partial_data(reactor_partial):
    """Certified L=96 record of the partially measured reactor at depth T=31."""
    return collect_certified_data(reactor_partial, 31, seed=1, counter=SampleCounter())


@pytest.fixture(scope="session")
def voltage_partial():
    return voltage_system(partial=True)


@pytest.fixture(scope="session")
def stable_system():
    """Stable 3-state, 2-input plant with full-state output."""
    sys = random_system(3, 2, 3, np.random.default_rng(11), spectral_radius=0.9)
    return LtiSystem(sys.a_matrix, sys.b_matrix, np.eye(3), name="stable3")


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
