import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chasecs.channel import build_channel
from chasecs.field import generate_field

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")


@pytest.fixture
def small_problem():
    """10x10 field, 5 sources, 60 sensors, one fading draw."""
    fld = generate_field(10, 30.0, 5, (30, 500), num_sensors=60, rng_seed=11)
    return fld, build_channel(fld, rng_seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
