import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def shifted_pair():
    from slsada import ShiftSpec, generate_synthetic_pair, sample_labeled_subset
    base = generate_synthetic_pair(ShiftSpec(rotation_deg=15, offset=1.0), seed=0)
    return base.with_labeled(sample_labeled_subset(base.original_y_source(), 5, seed=0))
