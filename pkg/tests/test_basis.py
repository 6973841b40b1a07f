from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqflux.basis import (LegendreTimeBasis, RTNBasis, gauss_legendre, h1_dim, h1_shape, legendre_derivative,
                          legendre_to_phi, phi_to_legendre, rtn_dim, rtn_divergence, scalar_dim,
                          simplex_orthonormal, triangle_rule, OrthonormalScalarBasis)

TRI = np.array([[0.1, 0.2], [0.7, 0.25], [0.3, 0.9]])


@pytest.mark.parametrize("degree", range(0, 13))
def test_triangle_rule_exact_for_monomials(degree):
    rule = triangle_rule(degree)
    x, y = rule.points.T
    for a in range(degree + 1):
        b = degree - a
        exact = factorial(a) * factorial(b) / factorial(a + b + 2)
        assert np.isclose(rule.weights @ (x ** a * y ** b), exact, rtol=1e-13, atol=1e-16)


def test_gauss_legendre_degree():
    rule = gauss_legendre(5)
    assert rule.degree == 9
    assert np.isclose(rule.weights @ rule.points ** 8, 2 / 9, rtol=1e-14)


@given(t0=st.floats(-3, 3), tau=st.floats(1e-3, 5), q=st.integers(0, 6))
def test_phi_orthonormal(t0, tau, q):
    b = LegendreTimeBasis(t0, t0 + tau, q)
    t, w = b.gauss(q + 2)
    ph = b.phi(t)
    assert np.allclose((ph * w) @ ph.T, np.eye(q + 1), atol=1e-11)


@given(tau=st.floats(1e-3, 5), q=st.integers(0, 6))
def test_derivative_coupling_matches_quadrature(tau, q):
    b = LegendreTimeBasis(0.5, 0.5 + tau, q)
    t, w = b.gauss(q + 2)
    C = (b.phi(t) * w) @ b.dphi(t).T
    assert np.allclose(b.derivative_coupling(), C, atol=1e-10 * max(1.0, 1 / tau))


@pytest.mark.parametrize("q", range(0, 6))
def test_endpoint_values(q):
    b = LegendreTimeBasis(1.0, 1.5, q)
    assert np.allclose(b.start_values(), b.phi(np.array([1.0]))[:, 0])
    assert np.allclose(b.end_values(), b.phi(np.array([1.5]))[:, 0])


@given(st.lists(st.floats(-2, 2), min_size=2, max_size=7))
def test_legendre_phi_roundtrip_and_derivative(c):
    b = LegendreTimeBasis(0.0, 0.3, len(c) - 1)
    c = np.array(c)
    assert np.allclose(phi_to_legendre(b, legendre_to_phi(b, c)), c)
    t = np.array([0.05, 0.17, 0.29])
    d = legendre_derivative(b, c)
    h = 1e-6
    num = (b.legendre_all(len(c) - 1, t + h).T @ c - b.legendre_all(len(c) - 1, t - h).T @ c) / (2 * h)
    assert np.allclose(b.legendre_all(len(d) - 1, t).T @ d, num, atol=1e-6)


@pytest.mark.parametrize("p", range(0, 7))
def test_simplex_orthonormal(p):
    rule = triangle_rule(2 * p + 2)
    S = simplex_orthonormal(p, rule.points)
    assert S.shape[0] == scalar_dim(p)
    G = 2.0 * (S * rule.weights) @ S.T
    assert np.allclose(G, np.eye(scalar_dim(p)), atol=1e-11)


@pytest.mark.parametrize("p", [0, 2, 4])
def test_physical_orthonormal_basis(p):
    B = OrthonormalScalarBasis(TRI, p)
    rule = triangle_rule(2 * p + 2)
    x = TRI[0] + rule.points @ np.stack([TRI[1] - TRI[0], TRI[2] - TRI[0]])
    S = B(x)
    G = (S * rule.weights * 2 * B.area) @ S.T
    assert np.allclose(G, np.eye(B.dim), atol=1e-11)


@pytest.mark.parametrize("p", range(1, 6))
def test_h1_shape_partition_of_unity(p):
    lam = triangle_rule(4).barycentric
    vals = h1_shape(p, lam)
    vals = vals[0] if isinstance(vals, tuple) else vals
    assert vals.shape[0] == h1_dim(p)
    assert np.allclose(vals[:3].sum(axis=0), 1.0)


def _edge_points(a, b, npts=6):
    g = gauss_legendre(npts)
    return 0.5 * (a + b) + np.outer(g.points, 0.5 * (b - a)), 0.5 * g.weights * np.linalg.norm(b - a)


@pytest.mark.parametrize("p", range(0, 5))
def test_rtn_nodal_property(p):
    B = RTNBasis(TRI, p, (4, 1, 7))
    assert B.dim == rtn_dim(p)
    for i in range(B.dim):
        c = B.interpolate(lambda x, i=i: B.eval(x)[i])
        assert np.allclose(c, np.eye(B.dim)[i], atol=1e-10)


@pytest.mark.parametrize("p", range(0, 5))
def test_rtn_interpolation_reproduces_polynomial_fields(p):
    B = RTNBasis(TRI, p)
    field = lambda x: np.stack([1.0 + x[:, 0] ** p, 2.0 - x[:, 1] ** p])
    c = B.interpolate(field)
    x = np.array([[0.3, 0.4], [0.35, 0.5], [0.5, 0.35]])
    assert np.allclose(c @ B.eval(x).reshape(B.dim, -1), field(x).ravel(), atol=1e-10)


@given(coef=st.lists(st.floats(-1, 1), min_size=rtn_dim(2), max_size=rtn_dim(2)))
def test_rtn_divergence_theorem(coef):
    B = RTNBasis(TRI, 2)
    c = np.array(coef)
    rule = triangle_rule(6)
    x = TRI[0] + rule.points @ np.stack([TRI[1] - TRI[0], TRI[2] - TRI[0]])
    lhs = (c @ B.div(x)) @ rule.weights * 2 * B.area
    rhs = 0.0
    for i, j in [(0, 1), (1, 2), (2, 0)]:
        pts, w = _edge_points(TRI[i], TRI[j])
        d = TRI[j] - TRI[i]
        n = np.array([d[1], -d[0]]) / np.linalg.norm(d)  # outward for counterclockwise vertices
        rhs += w @ (np.einsum("i,idn,d->n", c, B.eval(pts), n))
    assert np.isclose(lhs, rhs, atol=1e-11)
    poly = rtn_divergence(B, c)
    assert np.allclose(poly(x), c @ B.div(x), atol=1e-10)


@pytest.mark.parametrize("p", range(0, 4))
def test_rtn_normal_continuity_across_shared_edge(p):
    X = np.array([[0.0, 0.0], [1.0, 0.1], [0.2, 0.8], [1.1, 0.9]])
    K1, K2 = [0, 1, 2], [1, 3, 2]
    B1, B2 = RTNBasis(X[K1], p, K1), RTNBasis(X[K2], p, K2)
    pts, _ = _edge_points(X[1], X[2], 4)
    n = np.array([X[2, 1] - X[1, 1], X[1, 0] - X[2, 0]])
    # edge (1, 2) is local edge with the same global orientation in both triangles
    e1 = next(k for k in range(3) if set(np.array(K1)[list(B1.edge_frame(k)[:0]) or []]) == set() and
              {tuple(B1.edge_frame(k)[0]), tuple(B1.edge_frame(k)[1])} == {tuple(X[1]), tuple(X[2])})
    e2 = next(k for k in range(3) if {tuple(B2.edge_frame(k)[0]), tuple(B2.edge_frame(k)[1])} ==
              {tuple(X[1]), tuple(X[2])})
    for m in range(p + 1):
        v1 = B1.eval(pts)[e1 * (p + 1) + m] .T @ n
        v2 = B2.eval(pts)[e2 * (p + 1) + m].T @ n
        assert np.allclose(v1, v2, atol=1e-10)
