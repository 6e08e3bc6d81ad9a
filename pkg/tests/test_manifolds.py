import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemcontrol.geometry import ChartDomainError, INFINITE_RADIUS
from riemcontrol.manifolds import (EuclideanSpace, HyperbolicHalfSpace3, Sphere2, h3_christoffel,
                                   h3_field_norms, h3_nabla_bound, h3_vector_fields,
                                   s2_chart_fields, s2_chart_forward, s2_chart_inverse,
                                   s2_rotation_vector, s2_vector_fields)


def paper_christoffel(x):
    """(1/x3)(-d_jk d_i3 - d_ki d_j3 + d_ij d_k3) written out with loops."""
    d = lambda a, b: 1.0 if a == b else 0.0
    out = np.zeros((3, 3, 3))
    for k in range(3):
        for i in range(3):
            for j in range(3):
                out[k, i, j] = (-d(j, k) * d(i, 2) - d(k, i) * d(j, 2) + d(i, j) * d(k, 2)) / x[2]
    return out


def random_sphere(rng, n):
    x = rng.normal(size=(n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# --- H3 -----------------------------------------------------------------------


def test_h3_christoffel_matches_loop_formula():
    rng = np.random.default_rng(0)
    for x in np.column_stack([rng.normal(size=(50, 2)), rng.uniform(0.1, 10, 50)]):
        assert np.max(np.abs(h3_christoffel(x) - paper_christoffel(x))) <= 1e-14


def test_h3_metric_and_domain(h3):
    assert np.array_equal(h3.metric("identity", np.array([0, 0, 2.0])), np.eye(3) / 4)
    assert h3.contains([0, 0, 1e-12]) and not h3.contains([0, 0, 0.0])
    assert h3.injectivity_bound([0, 0, 1]) == INFINITE_RADIUS == 1e18


def test_h3_contract_matches_table(h3):
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = np.array([*rng.normal(size=2), rng.uniform(0.2, 4)])
        a, b = rng.normal(size=(2, 3))
        direct = np.einsum("kij,i,j->k", h3_christoffel(x), a, b)
        np.testing.assert_allclose(h3.contract_christoffel("identity", x, a, b), direct, atol=1e-13)


def test_h3_fields_at_base():
    f1, f2 = h3_vector_fields(np.array([0, 0, 1.0]))
    assert np.array_equal(f1, [0, 0, 1]) and np.array_equal(f2, [0, 0, 1])
    n1, n2 = h3_field_norms(np.array([0, 0, 1.0]))
    assert n1 == 1.0 and n2 == 1.0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 20))
def test_h3_field_norms_closed_form(a, b, c):
    h3 = HyperbolicHalfSpace3()
    x = np.array([a, b, c])
    f1, f2 = h3_vector_fields(x)
    n1, n2 = h3_field_norms(x)
    assert n1 == pytest.approx(h3.norm(x, f1), rel=1e-12)
    assert n2 == pytest.approx(h3.norm(x, f2), rel=1e-12)
    assert n1 >= 1.0 - 1e-15 and n2 >= 1.0 - 1e-15


def test_h3_nabla_bound_finite():
    bound = h3_nabla_bound(resolution=9)
    assert math.isfinite(bound) and bound > 0


# --- S2 charts -------------------------------------------------------------------


def test_chart_forward_examples():
    np.testing.assert_array_equal(s2_chart_forward("plus", np.array([1, 0, 0.0])), [1, 0])
    np.testing.assert_array_equal(s2_chart_forward("plus", np.array([0, 0, 1.0])), [0, 0])
    with pytest.raises(ChartDomainError):
        s2_chart_forward("minus", np.array([0, 0, 1.0]))
    with pytest.raises(ChartDomainError):
        s2_chart_forward("plus", np.array([0, 0, -1.0]))


def test_chart_inverse_examples():
    np.testing.assert_array_equal(s2_chart_inverse("plus", np.array([0, 0.0])), [0, 0, 1])
    np.testing.assert_array_equal(s2_chart_inverse("plus", np.array([1, 0.0])), [1, 0, 0])
    np.testing.assert_array_equal(s2_chart_inverse("minus", np.array([0, 0.0])), [0, 0, -1])


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_chart_inverse_lands_on_sphere(a, b):
    for c in ("plus", "minus"):
        x = s2_chart_inverse(c, np.array([a, b]))
        assert abs(x @ x - 1) <= 1e-12


def test_chart_roundtrip():
    rng = np.random.default_rng(2)
    x = random_sphere(rng, 2000)
    up = x[x[:, 2] > -0.9]
    assert np.max(np.abs(s2_chart_inverse("plus", s2_chart_forward("plus", up)) - up)) <= 1e-12
    down = x[x[:, 2] < 0.9]
    assert np.max(np.abs(s2_chart_inverse("minus", s2_chart_forward("minus", down)) - down)) <= 1e-12


def test_chart_transition_is_inversion(s2):
    xi = np.array([0.4, 2.5])
    x = s2_chart_inverse("plus", xi)
    np.testing.assert_allclose(s2_chart_forward("minus", x), xi / (xi @ xi), atol=1e-14)


def test_sphere_metric_positive_definite(s2):
    rng = np.random.default_rng(3)
    for xi in rng.normal(size=(20, 2)) * 3:
        assert np.linalg.eigvalsh(s2.metric("plus", xi)).min() > 0


# --- S2 fields --------------------------------------------------------------------


def test_s2_fields_at_north_pole():
    f1, f2, f3 = s2_vector_fields(np.array([0, 0, 1.0]))
    np.testing.assert_array_equal(f1, [0, 0, 0])
    np.testing.assert_array_equal(f2, [0, 1, 0])
    np.testing.assert_array_equal(f3, [-1, 0, 0])


def test_s2_fields_tangent_and_rank():
    rng = np.random.default_rng(4)
    x = random_sphere(rng, 1000)
    fields = np.stack(s2_vector_fields(x), axis=1)
    assert np.max(np.abs(np.einsum("nij,nj->ni", fields, x))) <= 1e-10
    ranks = np.linalg.matrix_rank(np.einsum("nij,nkj->nik", fields, fields), tol=1e-8)
    assert np.all(ranks == 2)


def test_s2_chart_expression_of_f1():
    """f1 in the plus chart is xi2 d/dxi1 - xi1 d/dxi2, checked through the chart differential."""
    s2 = Sphere2()
    for xi in (np.array([1.0, 0.0]), np.array([0.3, -0.7])):
        x = s2_chart_inverse("plus", xi)
        pushed = [s2.chart_jacobian("plus", x) @ f for f in s2_vector_fields(x)]
        for got, expect in zip(pushed, s2_chart_fields(xi)):
            np.testing.assert_allclose(got, expect, atol=1e-14)
    np.testing.assert_allclose(s2_chart_fields(np.array([1.0, 0]))[0], [0, -1])


def test_rotation_identity():
    rng = np.random.default_rng(5)
    x = random_sphere(rng, 500)
    u = rng.normal(size=(500, 3)) * 4
    f = np.stack(s2_vector_fields(x), axis=1)
    lhs = np.einsum("ni,nij->nj", u, f)
    rhs = np.cross(s2_rotation_vector(u), x)
    assert np.max(np.abs(lhs - rhs)) <= 1e-14


# --- flat space ----------------------------------------------------------------------


def test_euclidean_distance_is_norm():
    r = EuclideanSpace(2)
    p, q = np.array([0.0, 1.0]), np.array([3.0, 5.0])
    assert r.dist(p, q) == pytest.approx(5.0, abs=1e-9)
    np.testing.assert_allclose(r.transport(p, q, np.array([1.0, 2.0])), [1, 2], atol=1e-12)
    with pytest.raises(ValueError):
        EuclideanSpace(0)
