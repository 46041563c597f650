import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def f32_vectors(min_size=1, max_size=64, bound=1e3):
    """Finite float32 vectors with entries in ``[-bound, bound]``."""
    elems = st.floats(-bound, bound, allow_nan=False, allow_infinity=False, width=32)
    return st.lists(elems, min_size=min_size, max_size=max_size).map(lambda v: np.asarray(v, dtype=np.float32))


def nonzero(v):
    return bool(np.any(v != 0))


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
