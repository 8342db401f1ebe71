import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fragtree import laws
from fragtree.laws import SplitLaw

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


RANDOM_LAWS = {
    "binary": laws.binary(),
    "mary5": laws.mary(5),
    "quad3": laws.quad(3),
    "simplex3": laws.simplex(3),
    "beta_skew": laws.beta(2.5, 0.7),
    "beta_int": laws.beta(3, 2),
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_make_parametrize_id(config, val, argname):
    if isinstance(val, SplitLaw):
        return val.label
    return None
