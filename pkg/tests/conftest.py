import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sonopt.scenario import random_instance, t2_fixture

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def t2():
    return t2_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_instance(rng, max_bs=4, max_clusters=8, max_users=16, n_tilts=4):
    n_bs = int(rng.integers(1, max_bs + 1))
    n_clusters = int(rng.integers(1, max_clusters + 1))
    n_users = int(rng.integers(n_clusters, max(n_clusters, max_users) + 1))
    return random_instance(rng, n_bs, n_clusters, n_users=n_users, n_tilts=n_tilts)
