"""Randomized geometry checks against closed-form oracles.

Used by the ``verify-geometry`` command and the acceptance tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import log_array, transport_along
from .manifolds import HyperbolicHalfSpace3, Sphere2


def h3_distance_oracle(p, q):
    """arccosh(1 + |p - q|^2 / (2 p3 q3))."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    return float(np.arccosh(1.0 + np.sum((p - q) ** 2) / (2.0 * p[2] * q[2])))


def s2_transport_oracle(p, q, v):
    """Rotate ``v`` about p x q by the angle between p and q (Rodrigues)."""
    p, q, v = (np.asarray(a, float) for a in (p, q, v))
    axis = np.cross(p, q)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        return v.copy()
    k = axis / s
    c = float(np.clip(p @ q, -1.0, 1.0))
    return v * c + np.cross(k, v) * s + k * (k @ v) * (1.0 - c)


@dataclass
class GeometryReport:
    manifold: str
    trials: int
    seed: int
    roundtrip: float
    isometry: float
    distance_oracle: float
    transport_oracle: float
    wall_time: float

    def worst(self):
        return max(self.roundtrip, self.isometry, self.distance_oracle, self.transport_oracle)

    def passed(self, roundtrip_tol=1e-6, isometry_tol=1e-6, oracle_tol=1e-5):
        return (self.roundtrip <= roundtrip_tol and self.isometry <= isometry_tol
                and self.distance_oracle <= oracle_tol and self.transport_oracle <= oracle_tol)

    def to_record(self):
        rec = asdict(self)
        rec["wall_time_ms"] = round(1000 * rec.pop("wall_time"), 3)
        return rec


def _random_instance(manifold, rng):
    if isinstance(manifold, HyperbolicHalfSpace3):
        p = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), math.exp(rng.uniform(-1, 1))])
        length = rng.uniform(0.05, 2.0)
    else:
        p = rng.normal(size=3)
        p /= np.linalg.norm(p)
        length = rng.uniform(0.05, 2.5)
    d = manifold.project_tangent(p, rng.normal(size=3))
    v = d * (length / manifold.norm(p, d))
    w = manifold.project_tangent(p, rng.normal(size=3))
    return p, v, w


def run_geometry_suite(name, trials=200, seed=0) -> GeometryReport:
    """Roundtrip, isometry and oracle errors over ``trials`` random instances.

    Each instance draws p and a tangent v, follows exp_p(v) while carrying two
    vectors, then solves log_p(q) by shooting.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    manifold = {"h3": HyperbolicHalfSpace3, "s2": Sphere2}[name]()
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    roundtrip = isometry = dist_err = transport_err = 0.0
    for _ in range(trials):
        p, v, w = _random_instance(manifold, rng)
        q, moved = transport_along(manifold, p, v, np.stack([v, w]))
        back = log_array(manifold, p, q)
        roundtrip = max(roundtrip, math.sqrt(max(manifold.inner(p, back - v, back - v), 0.0)))
        for a, b in ((v, moved[0]), (w, moved[1])):
            isometry = max(isometry, abs(manifold.norm(q, b) - manifold.norm(p, a)))
        isometry = max(isometry, abs(manifold.inner(q, moved[0], moved[1]) - manifold.inner(p, v, w)))
        if isinstance(manifold, HyperbolicHalfSpace3):
            dist_err = max(dist_err, abs(manifold.norm(p, back) - h3_distance_oracle(p, q)))
            # along a vertical geodesic ambient components scale by the height ratio
            up = np.array([0.0, 0.0, p[2] * rng.uniform(-1.5, 1.5)])
            top, carried = transport_along(manifold, p, up, w)
            transport_err = max(transport_err, float(np.linalg.norm(carried - w * top[2] / p[2])
                                                     / np.linalg.norm(w * top[2] / p[2])))
        else:
            dist_err = max(dist_err, abs(manifold.norm(p, back) - math.acos(np.clip(p @ q, -1, 1))))
            transport_err = max(transport_err,
                                float(np.linalg.norm(moved[1] - s2_transport_oracle(p, q, w))))
    return GeometryReport(name, trials, seed, float(roundtrip), float(isometry), float(dist_err),
                          float(transport_err),
                          time.perf_counter() - t0)
