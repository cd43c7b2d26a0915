import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from repmatch.data import CovariateSchema

settings.register_profile(
    "repmatch", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repmatch")


def random_instance(rng, max_T=6, max_L=12, max_P=3, max_K=3, min_K=2):
    """A small matching instance: schema, template rows and level rows."""
    P = int(rng.integers(1, max_P + 1))
    sizes = [int(rng.integers(min_K, max_K + 1)) for _ in range(P)]
    schema = CovariateSchema.from_sizes(sizes)
    L = int(rng.integers(2, max_L + 1))
    T = int(rng.integers(1, min(L, max_T) + 1))
    lx = np.column_stack([rng.integers(0, k, L) for k in sizes])
    tx = np.column_stack([rng.integers(0, k, T) for k in sizes])
    return schema, tx, lx


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
