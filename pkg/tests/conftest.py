import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from texsplat.scene import GaussianScene, look_at, pinhole

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_scene(rng, n, spread=0.6, depth=(3.0, 5.0), scale=(0.05, 0.3)):
    means = np.column_stack([rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n),
                             rng.uniform(*depth, n)])
    quats = rng.normal(size=(n, 4))
    scales = rng.uniform(*scale, size=(n, 3))
    opac = rng.uniform(0.2, 0.9, n)
    colors = rng.uniform(0, 1, (n, 3))
    return GaussianScene.from_activated(means, quats, scales, opac, colors,
                                        colors_g=rng.uniform(0, 1, (n, 3)),
                                        background=rng.uniform(0, 1, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene(rng):
    return random_scene(rng, 12)


@pytest.fixture
def small_camera():
    return pinhole(24, 20, 50.0)


@pytest.fixture
def arc_cameras():
    return [pinhole(32, 32, 50.0, look_at((x, 0.0, -4.0), (0.0, 0.0, 0.0))) for x in (-0.4, 0.0, 0.4)]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
