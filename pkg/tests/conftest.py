import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tship.generate import generate_instance
from tship.graph import make_arc_system

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def edge():
    """Single symmetric unit edge 0-1."""
    return make_arc_system(2, [(0, 1, 1.0)])


@pytest.fixture
def path3():
    return make_arc_system(3, [(0, 1, 2.0), (1, 2, 3.0)])


@pytest.fixture
def triangle():
    return make_arc_system(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)])


def random_instance(n, seed, lam=None):
    return generate_instance("random-connected", n, seed, lam=lam)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
