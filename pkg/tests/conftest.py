import time

import numpy as np
import pytest
from hypothesis import settings

import phototact as pt
from phototact import defaults
from phototact.calibration import CalibrationModel, TrainConfig, build_calib_dataset, train_mlp

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def pytest_addoption(parser):
    parser.addoption("--run-long", action="store_true", default=False, help="run exhaustive sweep tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-long"):
        return
    skip = pytest.mark.skip(reason="needs --run-long")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def geometry():
    return pt.SensorGeometry()


@pytest.fixture(scope="session")
def membrane(geometry):
    return pt.default_membrane(geometry)


@pytest.fixture(scope="session")
def small_geometry():
    return pt.SensorGeometry(width=100, height=80, mm_per_pixel=0.1)


@pytest.fixture(scope="session")
def small_membrane(small_geometry):
    return pt.default_membrane(small_geometry)


@pytest.fixture(scope="session")
def fixture_durations():
    return {}


@pytest.fixture(scope="session")
def fast_model(small_geometry, small_membrane):
    """Quick calibration model on the small geometry, for unit tests."""
    features, depths = build_calib_dataset(10, 3.0, small_geometry, small_membrane, seed=11)
    return train_mlp(features, depths, TrainConfig(epochs=15, seed=11))


@pytest.fixture(scope="session")
def calib_model(geometry, membrane, fixture_durations):
    """Full acceptance-grade calibration model: 30 captures, default training."""
    started = time.monotonic()
    features, depths = build_calib_dataset(
        defaults.CALIBRATION_CAPTURES, defaults.CALIBRATION_SPHERE_RADIUS_MM, geometry, membrane, seed=123
    )
    model = train_mlp(features, depths, TrainConfig(seed=0))
    fixture_durations["calib_model"] = time.monotonic() - started
    return model


def linear_hue_model(coefficient: float) -> CalibrationModel:
    """Hand-built model computing ~coefficient * dH through near-linear tanh layers."""
    eps = 1e-5
    shapes = [(5, 32), (32, 32), (32, 32), (32, 1)]
    weights = [np.zeros(s) for s in shapes]
    weights[0][0, 0] = eps
    weights[1][0, 0] = 1.0
    weights[2][0, 0] = 1.0
    weights[3][0, 0] = coefficient / eps
    biases = [np.zeros(s[1]) for s in shapes]
    return CalibrationModel(
        weights=tuple(weights),
        biases=tuple(biases),
        feature_shift=np.zeros(5),
        feature_scale=np.ones(5),
    )
