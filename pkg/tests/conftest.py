import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riemcontrol.geometry import ManifoldPoint, TangentVector
from riemcontrol.manifolds import EuclideanSpace, HyperbolicHalfSpace3, Sphere2

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def h3():
    return HyperbolicHalfSpace3()


@pytest.fixture(scope="session")
def s2():
    return Sphere2()


@pytest.fixture(scope="session")
def r3():
    return EuclideanSpace(3)


def point(manifold, coords):
    return ManifoldPoint(manifold, np.asarray(coords, dtype=float))


def vec(base, comps):
    return TangentVector(base, np.asarray(comps, dtype=float))


def great_circle_exp(x, v):
    """Sphere oracle: cos|v| x + sin|v| v/|v|."""
    r = np.linalg.norm(v)
    if r == 0:
        return np.array(x, float)
    return math.cos(r) * np.asarray(x) + math.sin(r) * np.asarray(v) / r
