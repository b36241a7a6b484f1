import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def gen():
    return np.random.default_rng(20240601)


def row_stochastic(gen, n, c):
    return gen.dirichlet(np.ones(c), size=n)
