import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lionxa.lidar_io import SensorSpec
from lionxa.scene import StreetParams, simulate_scan, synth_scene

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sensor32():
    return SensorSpec.uniform(32, 10.0, -30.0, 128, 60.0, 1.8)


@pytest.fixture(scope="session")
def sensor64():
    return SensorSpec.uniform(64, 2.0, -24.8, 128, 60.0, 1.73)


@pytest.fixture(scope="session")
def street_scan(sensor32):
    scene = synth_scene(3, StreetParams().scene_params())
    return simulate_scan(scene, sensor32, 3)
