import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wimesh.array_model import ArrayGeometry, RadioConfig
from wimesh.pipeline import PipelineConfig, demo_scene_path, estimate, sanitize, simulate

settings.register_profile("wimesh", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("wimesh")


@pytest.fixture(scope="session")
def radio():
    return RadioConfig()


@pytest.fixture(scope="session")
def geometry(radio):
    return ArrayGeometry.for_config(radio)


@pytest.fixture(scope="session")
def demo_dict():
    return json.loads(demo_scene_path().read_text())


@pytest.fixture(scope="session")
def demo_cfg(demo_dict):
    return PipelineConfig.from_dict(demo_dict)


@pytest.fixture(scope="session")
def demo_images(demo_cfg):
    """Per-receiver AoA image stacks ``(2, 30, 180, 180)`` for the bundled walking scene."""
    images = estimate(demo_cfg, sanitize(simulate(demo_cfg)))
    return np.array([[img.values for img in frames] for frames in images])
