import pytest

from integrate import SimConfig
from model import CoefficientSet

BENCHMARK = dict(a1=1.0, a2=0.5, b1=1.0, b2=1.0, c1=0.5, c2=0.8, e=1.0, sigma1=0.1, rho1=0.1)


@pytest.fixture
def h1_coefficients():
    return CoefficientSet.from_constants(**BENCHMARK)


@pytest.fixture
def h2_coefficients():
    return CoefficientSet.from_constants(**BENCHMARK, sigma2=0.05, rho2=0.05)


@pytest.fixture
def noise_free_coefficients():
    rates = {name: value for name, value in BENCHMARK.items() if name not in ("sigma1", "rho1")}
    return CoefficientSet.from_constants(**rates)


@pytest.fixture
def short_config():
    return SimConfig(t_end=1.0, dt=0.01, save_every=10)


BENCHMARK_CONFIG = """\
# benchmark under H1
t_end = 1
dt = 0.01
save_every = 10

a1.value = 1
a2.value = 0.5
b1.value = 1
b2.value = 1
c1.value = 0.5
c2.value = 0.8
e.value = 1
sigma1.value = 0.1
rho1.value = 0.1

paths = 8
seed = 3
"""


@pytest.fixture
def benchmark_text():
    return BENCHMARK_CONFIG
