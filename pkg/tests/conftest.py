import numpy as np
import pytest
from hypothesis import settings

from nilbs import geometry as geo
from nilbs.dataset import make_animation
from nilbs.occupancy import bake_grid

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_anim():
    return make_animation(4, seed=3, stride=10)


@pytest.fixture(scope="session")
def small_grid(small_anim):
    return bake_grid(small_anim.mesh.xy, small_anim.bbox_min, small_anim.bbox_max, (64, 64))


def random_rigid(rng, scale=2.0):
    return geo.translate(*rng.uniform(-scale, scale, 2)) @ geo.rot_z(rng.uniform(-np.pi, np.pi))


def random_affine(rng):
    m = np.eye(4)
    m[:3, :] = rng.normal(size=(3, 4))
    m[:3, :3] += 2 * np.eye(3)
    return m
