import numpy as np
import pytest

from sslcarma.carma import CarmaModel
from sslcarma.sampling import SampledSystem
from sslcarma.semilevy import PeriodPartition, SemiLevySpec, exponential_jumps

LENGTHS = (10.0, 2.0, 1.0)
RATES = (10.0, 15.0, 3.0)
AR, MA = (3.0, 0.5), (2.0,)
BETA = 32.0  # second moment of exp(0.25) jumps

RV_AR, RV_MA = (1.0472, 0.2158), (1.0843,)
RV_RATES = (3.5099, 6.2535, 14.3454)


@pytest.fixture(scope="session")
def partition():
    return PeriodPartition(LENGTHS, RATES)


@pytest.fixture(scope="session")
def spec(partition):
    return SemiLevySpec(partition, 0.0, exponential_jumps(0.25))


@pytest.fixture(scope="session")
def model():
    return CarmaModel(2, 1, AR, MA)


@pytest.fixture(scope="session")
def system(model, spec):
    return SampledSystem(model, spec, 13)


@pytest.fixture(scope="session")
def rv_system():
    spec = SemiLevySpec(PeriodPartition(LENGTHS, RV_RATES), 0.0, exponential_jumps(1.0))
    return SampledSystem(CarmaModel(2, 1, RV_AR, RV_MA), spec, 13)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
