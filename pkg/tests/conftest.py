import numpy as np
import pytest

from tdoaspace import NoiseSpec, SensorArray, cross_array


@pytest.fixture
def planar_array():
    """The reference 3-sensor planar configuration used throughout."""
    return SensorArray([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)])


@pytest.fixture
def cross():
    return cross_array()


def random_spd(q, rng):
    """Well-conditioned random SPD matrix: A^T A + q I."""
    A = rng.normal(size=(q, q))
    return A.T @ A + q * np.eye(q)


def random_spd_spec(q, rng):
    return NoiseSpec(random_spd(q, rng))


def random_array(dim, n, rng, scale=2.0):
    """Random non-degenerate array of n+1 sensors."""
    while True:
        pos = rng.uniform(-scale, scale, size=(n + 1, dim))
        try:
            return SensorArray(pos)
        except ValueError:
            continue
