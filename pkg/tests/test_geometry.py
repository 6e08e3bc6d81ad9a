import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemcontrol.geometry import (ChartDomainError, ContractError, GeodesicSolveError,
                                  OutsideInjectivityError, christoffel, distance, exp_map,
                                  geodesic, log_map, metric_inner, parallel_transport,
                                  tangent_norm, transport_array)
from riemcontrol.manifolds import HyperbolicHalfSpace3, Sphere2, h3_christoffel
from riemcontrol.suite import h3_distance_oracle, s2_transport_oracle

from conftest import great_circle_exp, point, vec

E = math.e

# --- oracles first -----------------------------------------------------------


def test_h3_distance_oracle_values():
    assert h3_distance_oracle([0, 0, 1], [0, 0, E]) == pytest.approx(1.0, abs=1e-15)
    assert h3_distance_oracle([0, 0, 1], [0, 0, 1]) == 0.0


def test_s2_rotation_oracle_quarter_turn():
    out = s2_transport_oracle([0, 0, 1], [1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(out, [0, 1, 0], atol=1e-15)
    out = s2_transport_oracle([0, 0, 1], [1, 0, 0], [1, 0, 0])
    np.testing.assert_allclose(out, [0, 0, -1], atol=1e-15)


# --- metric_inner / tangent_norm ---------------------------------------------


def test_metric_inner_h3_examples(h3):
    x = point(h3, [0, 0, 1])
    assert metric_inner(x, vec(x, [0, 0, 1]), vec(x, [0, 0, 1])) == pytest.approx(1.0)
    x = point(h3, [0, 0, 2])
    assert metric_inner(x, vec(x, [0, 0, 2]), vec(x, [0, 0, 2])) == pytest.approx(1.0)
    assert metric_inner(x, vec(x, [0.3, -1, 2]), vec(x, [0, 0, 0])) == 0.0


def test_metric_inner_mismatched_base(h3):
    x, y = point(h3, [0, 0, 1]), point(h3, [0, 0, 2])
    with pytest.raises(ContractError):
        metric_inner(x, vec(x, [1, 0, 0]), vec(y, [1, 0, 0]))
    with pytest.raises(ContractError):
        tangent_norm(x, vec(y, [1, 0, 0]))


def test_tangent_norm_examples(h3, s2):
    x = point(h3, [0, 0, 2])
    assert tangent_norm(x, vec(x, [2, 0, 0])) == pytest.approx(1.0)
    n = point(s2, [0, 0, 1])
    assert tangent_norm(n, vec(n, [1, 0, 0])) == pytest.approx(1.0)
    assert tangent_norm(n, vec(n, [0, 0, 0])) == 0.0


def test_tangent_vector_rejects_normal_component(s2):
    n = point(s2, [0, 0, 1])
    with pytest.raises(ContractError):
        vec(n, [0, 0, 1e-6])


def test_point_domain_checks(h3, s2):
    with pytest.raises(ChartDomainError):
        point(h3, [0, 0, -1])
    with pytest.raises(ChartDomainError):
        point(s2, [0, 0, 1.1])
    with pytest.raises(ContractError):
        point(s2, [0, 1])


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 5),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-3, 3))
def test_metric_inner_symmetric_bilinear(a, b, c, u, v, lam):
    h3 = HyperbolicHalfSpace3()
    x = point(h3, [a, b, c])
    U, V = vec(x, u), vec(x, v)
    assert metric_inner(x, U, V) == pytest.approx(metric_inner(x, V, U), rel=1e-12, abs=1e-12)
    W = vec(x, lam * np.asarray(u) + np.asarray(v))
    lhs = metric_inner(x, W, V)
    rhs = lam * metric_inner(x, U, V) + metric_inner(x, V, V)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


# --- distance ----------------------------------------------------------------


def test_distance_examples(h3, s2):
    assert distance(point(h3, [0, 0, 1]), point(h3, [0, 0, E])) == pytest.approx(1.0, abs=1e-9)
    assert distance(point(s2, [0, 0, 1]), point(s2, [1, 0, 0])) == pytest.approx(math.pi / 2, abs=1e-9)
    x = point(s2, [0.6, 0, 0.8])
    assert distance(x, x) == 0.0


def test_distance_h3_against_arccosh(h3):
    rng = np.random.default_rng(3)
    worst = 0.0
    done = 0
    while done < 100:
        p = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), math.exp(rng.uniform(-1, 1))])
        q = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), math.exp(rng.uniform(-1, 1))])
        oracle = h3_distance_oracle(p, q)
        if oracle > 3:
            continue
        worst = max(worst, abs(h3.dist(p, q) - oracle))
        done += 1
    assert worst <= 1e-5


def test_distance_symmetric_and_triangle(s2, h3):
    rng = np.random.default_rng(4)
    for M in (s2, h3):
        for _ in range(10):
            if M is s2:
                pts = rng.normal(size=(3, 3))
                pts /= np.linalg.norm(pts, axis=1, keepdims=True)
            else:
                pts = np.column_stack([rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3),
                                       rng.uniform(0.5, 2, 3)])
            a, b, c = pts
            assert M.dist(a, b) == pytest.approx(M.dist(b, a), abs=1e-9)
            assert M.dist(a, c) <= M.dist(a, b) + M.dist(b, c) + 1e-6


def test_distance_unavailable_on_antipodes(s2):
    from riemcontrol.geometry import DistanceUnavailableError

    with pytest.raises(DistanceUnavailableError) as info:
        distance(point(s2, [0, 0, 1]), point(s2, [0, 0, -1]))
    assert info.value.starts_tried >= 1


# --- exp / log ----------------------------------------------------------------


def test_exp_examples(h3, s2):
    n = point(s2, [0, 0, 1])
    assert np.array_equal(exp_map(n, vec(n, [0, 0, 0])).coords, n.coords)
    out = exp_map(n, vec(n, [math.pi / 2, 0, 0]))
    np.testing.assert_allclose(out.coords, [1, 0, 0], atol=1e-9)
    x = point(h3, [0, 0, 1])
    np.testing.assert_allclose(exp_map(x, vec(x, [0, 0, 1])).coords, [0, 0, E], atol=1e-9)


def test_log_examples(h3, s2):
    n = point(s2, [0, 0, 1])
    assert not log_map(n, n).components.any()
    np.testing.assert_allclose(log_map(n, point(s2, [1, 0, 0])).components,
                               [math.pi / 2, 0, 0], atol=1e-8)
    x = point(h3, [0, 0, 1])
    np.testing.assert_allclose(log_map(x, point(h3, [0, 0, E])).components, [0, 0, 1], atol=1e-8)


def test_log_beyond_injectivity_raises(s2):
    with pytest.raises(GeodesicSolveError):
        log_map(point(s2, [0, 0, 1]), point(s2, [0, 0, -1]))


def test_exp_matches_great_circle(s2):
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=3)
        x /= np.linalg.norm(x)
        v = s2.project_tangent(x, rng.normal(size=3))
        v *= rng.uniform(0.1, 3.0) / np.linalg.norm(v)
        np.testing.assert_allclose(s2.exp(x, v), great_circle_exp(x, v), atol=1e-9)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0.05, 0.9))
def test_exp_log_roundtrip_s2(xs, vs, frac):
    s2 = Sphere2()
    x = np.asarray(xs) + np.array([0, 0, 1.5])
    x /= np.linalg.norm(x)
    v = s2.project_tangent(x, np.asarray(vs) + np.array([0.3, 0, 0]))
    v *= frac * math.pi / np.linalg.norm(v)
    back = s2.log(x, s2.exp(x, v))
    assert np.linalg.norm(back - v) <= 1e-6


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0.05, 2.5))
def test_exp_log_roundtrip_h3(a, b, lz, vs, length):
    h3 = HyperbolicHalfSpace3()
    x = np.array([a, b, math.exp(lz)])
    v = np.asarray(vs) + np.array([0, 0, 0.1])
    v *= length / h3.norm(x, v)
    back = h3.log(x, h3.exp(x, v))
    assert h3.norm(x, back - v) <= 1e-6


# --- parallel transport ----------------------------------------------------------


def test_transport_examples(h3, s2):
    n = point(s2, [0, 0, 1])
    v = vec(n, [0, 1, 0])
    assert np.array_equal(parallel_transport(n, n, v).components, v.components)
    out = parallel_transport(n, point(s2, [1, 0, 0]), v)
    np.testing.assert_allclose(out.components, [0, 1, 0], atol=1e-9)
    x = point(h3, [0, 0, 1])
    out = parallel_transport(x, point(h3, [0, 0, E]), vec(x, [1, 0, 0]))
    np.testing.assert_allclose(out.components, [E, 0, 0], atol=1e-8)


def test_transport_outside_injectivity(s2):
    with pytest.raises(GeodesicSolveError):
        transport_array(s2, [0, 0, 1], [0, 0, -1], [1, 0, 0])


def test_transport_matches_rotation_oracle(s2):
    rng = np.random.default_rng(6)
    for _ in range(20):
        p, q = rng.normal(size=(2, 3))
        p /= np.linalg.norm(p)
        q /= np.linalg.norm(q)
        if p @ q < -0.95:
            continue
        v = s2.project_tangent(p, rng.normal(size=3))
        np.testing.assert_allclose(s2.transport(p, q, v), s2_transport_oracle(p, q, v), atol=1e-5)


@given(st.integers(0, 10_000))
def test_transport_isometry(seed):
    rng = np.random.default_rng(seed)
    h3 = HyperbolicHalfSpace3()
    p = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 2)])
    q = p + rng.normal(size=3) * 0.4
    q[2] = abs(q[2]) + 0.2
    u, v = rng.normal(size=(2, 3))
    tu, tv = h3.transport(p, q, np.stack([u, v]))
    assert abs(h3.inner(q, tu, tv) - h3.inner(p, u, v)) <= 1e-6


# --- christoffel --------------------------------------------------------------


def test_christoffel_examples(h3):
    table = christoffel(point(h3, [0, 0, 2])).entries
    assert table[2, 0, 0] == 0.5
    assert table[0, 0, 2] == -0.5


def test_christoffel_symmetric_all_backends(h3, s2, r3):
    for M, p in ((h3, [0.3, -1, 0.7]), (s2, [0.6, 0, 0.8]), (s2, [0.6, 0, -0.8]), (r3, [1, 2, 3])):
        t = christoffel(point(M, p)).entries
        assert np.array_equal(t, np.swapaxes(t, 1, 2))


def test_generic_christoffel_matches_closed_form(h3, s2):
    """Finite differences of the metric (base class path) agree with closed forms."""
    from riemcontrol.geometry import Manifold

    for M, chart, xi in ((h3, "identity", np.array([0.2, -0.4, 1.3])),
                         (s2, "plus", np.array([0.3, -0.2]))):
        generic = Manifold.christoffel(M, chart, xi)
        np.testing.assert_allclose(generic, M.christoffel(chart, xi), atol=1e-7)


def test_metric_compatibility_along_curve(s2):
    """d/dt g_ij(xi(t)) = Gamma^l_ki g_lj xi'^k + Gamma^l_kj g_il xi'^k."""
    xi0, d = np.array([0.3, -0.2]), np.array([0.7, 0.4])
    h = 1e-5
    dg = (s2.metric("plus", xi0 + h * d) - s2.metric("plus", xi0 - h * d)) / (2 * h)
    g = s2.metric("plus", xi0)
    gam = s2.christoffel("plus", xi0)
    pred = np.einsum("lki,lj,k->ij", gam, g, d) + np.einsum("lkj,il,k->ij", gam, g, d)
    np.testing.assert_allclose(dg, pred, atol=1e-4)


# --- geodesic segment -----------------------------------------------------------


def test_geodesic_constant_speed(h3, s2):
    for M, p, v in ((h3, [0.1, 0.2, 1.0], [0.8, -0.3, 0.5]), (s2, [0, 0.6, 0.8], [1, 0, 0])):
        x = point(M, p)
        seg = geodesic(x, vec(x, v), t_end=2.0)
        speeds = seg.speeds()
        assert np.ptp(speeds) <= 1e-6 * speeds[0]
        assert seg.length == pytest.approx(2.0 * tangent_norm(x, vec(x, v)), rel=1e-6)


def test_sphere_geodesic_crosses_equator_stays_on_sphere(s2):
    x = point(s2, [0, 0, 1])
    seg = geodesic(x, vec(x, [1.0, 0.5, 0]), t_end=2.5)
    assert np.max(np.abs(np.linalg.norm(seg.points, axis=1) - 1)) <= 1e-9
