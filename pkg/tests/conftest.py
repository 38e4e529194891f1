import math

import numpy as np
import pytest

from corrslam.geometry import Pose2D, Scan
from corrslam.gridmap import GridMap
from corrslam.synthetic import SyntheticWorld, rasterize, room_world, sense


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture()
def room() -> SyntheticWorld:
    return room_world()


@pytest.fixture()
def room_grid(room) -> GridMap:
    return rasterize(room.segments, resolution=0.05)


@pytest.fixture()
def room_scan(room) -> Scan:
    """Noise-free 360-beam scan from the first pose of the room drive."""
    return sense(room, room.trajectory[0])


def random_pose(rng: np.random.Generator, extent: float = 5.0) -> Pose2D:
    return Pose2D(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-math.pi, math.pi))
