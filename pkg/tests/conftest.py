import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trajtopo.artifacts import Trajectory
from trajtopo.geometry import DistanceMatrix, pairwise_distances


def make_trajectory(points, ids=None) -> Trajectory:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if ids is None:
        ids = np.arange(points.shape[0])
    return Trajectory(points=points, iteration_ids=ids)


def distances_of(points) -> DistanceMatrix:
    return pairwise_distances(make_trajectory(points))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
