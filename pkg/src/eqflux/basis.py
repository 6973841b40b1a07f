"""Polynomial bases and quadrature rules.

Temporal Legendre bases on a time interval, hierarchical H1 shape functions
on triangles (vertex / edge / bubble groups, needed for the edge minimum
rule), orthonormal Dubiner bases for broken scalar spaces, and local
Raviart-Thomas-Nedelec bases built from normal-moment degrees of freedom.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import eval_jacobi, roots_jacobi

# local edge k joins local vertices LOCAL_EDGES[k]
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights with a declared polynomial exactness degree.

    For triangle rules ``points`` are coordinates on the reference triangle
    with vertices (0, 0), (1, 0), (0, 1); for interval rules they lie in
    [-1, 1].
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return np.stack([1.0 - x - y, x, y], axis=1)


@lru_cache(maxsize=None)
def gauss_legendre(npts: int) -> QuadratureRule:
    x, w = npleg.leggauss(npts)
    return QuadratureRule(x, w, 2 * npts - 1)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed (Stroud) Gauss-Jacobi rule exact for total degree ``degree``."""
    n = max(1, (degree + 2) // 2)
    a, wa = npleg.leggauss(n)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = 0.25 * (1.0 + A) * (1.0 - B)
    y = 0.5 * (1.0 + B)
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    w = (WA * WB).ravel() / 8.0
    return QuadratureRule(pts, w, 2 * n - 1)


# ---------------------------------------------------------------------------
# Legendre polynomials
# ---------------------------------------------------------------------------

def legendre_table(n: int, x):
    """Values and derivatives of P_0..P_n at ``x`` (shape (n+1, *x.shape))."""
    x = np.asarray(x, dtype=float)
    P = np.zeros((n + 1,) + x.shape)
    dP = np.zeros_like(P)
    P[0] = 1.0
    if n >= 1:
        P[1] = x
        dP[1] = 1.0
    for k in range(1, n):
        P[k + 1] = ((2 * k + 1) * x * P[k] - k * P[k - 1]) / (k + 1)
        dP[k + 1] = dP[k - 1] + (2 * k + 1) * P[k]
    return P, dP


class LegendreTimeBasis:
    """Mapped Legendre polynomials L_q and the orthonormal family phi_j on (t0, t1).

    phi_j = sqrt((2j+1)/tau) L_j, so that the phi_j are L2(t0, t1)-orthonormal.
    """

    def __init__(self, t0: float, t1: float, degree: int):
        if not t1 > t0:
            raise ValueError("empty time interval")
        if degree < 0:
            raise ValueError("temporal degree must be nonnegative")
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.degree = int(degree)
        self.tau = self.t1 - self.t0

    def reference(self, t):
        return (2.0 * np.asarray(t, dtype=float) - self.t0 - self.t1) / self.tau

    def scale(self, j):
        return np.sqrt((2.0 * np.asarray(j) + 1.0) / self.tau)

    def legendre(self, q: int, t):
        """L_q(t); ``q`` may exceed the basis degree."""
        if q < 0:
            raise ValueError("Legendre degree must be nonnegative")
        P, _ = legendre_table(q, self.reference(t))
        return P[q]

    def legendre_all(self, nmax: int, t, derivative=False):
        P, dP = legendre_table(nmax, self.reference(t))
        if derivative:
            return P, dP * (2.0 / self.tau)
        return P

    def phi(self, t, nmax=None):
        """phi_0..phi_nmax at times ``t``: shape (nmax+1, len(t))."""
        nmax = self.degree if nmax is None else nmax
        P = self.legendre_all(nmax, t)
        return P * self.scale(np.arange(nmax + 1))[:, None] if P.ndim == 2 else P * self.scale(np.arange(nmax + 1))

    def dphi(self, t, nmax=None):
        nmax = self.degree if nmax is None else nmax
        _, dP = self.legendre_all(nmax, t, derivative=True)
        s = self.scale(np.arange(nmax + 1))
        return dP * (s[:, None] if dP.ndim == 2 else s)

    def legendre_l2_norm_sq(self, q: int) -> float:
        if q < 0:
            raise ValueError("Legendre degree must be nonnegative")
        return self.tau / (2 * q + 1)

    def start_values(self, nmax=None):
        """phi_j(t0^+)."""
        nmax = self.degree if nmax is None else nmax
        j = np.arange(nmax + 1)
        return self.scale(j) * (-1.0) ** j

    def end_values(self, nmax=None):
        nmax = self.degree if nmax is None else nmax
        return self.scale(np.arange(nmax + 1))

    def derivative_coupling(self, nmax=None) -> np.ndarray:
        """C[k, j] = int phi_j' phi_k dt, exact.

        Uses P_j' = sum_{m<j, m+j odd} (2m+1) P_m, which gives 2 s_j s_k for
        k < j with j + k odd and zero otherwise.
        """
        nmax = self.degree if nmax is None else nmax
        s = self.scale(np.arange(nmax + 1))
        C = np.zeros((nmax + 1, nmax + 1))
        for j in range(nmax + 1):
            for k in range(j):
                if (j + k) % 2 == 1:
                    C[k, j] = 2.0 * s[j] * s[k]
        return C

    def gauss(self, npts: int):
        """Physical Gauss-Legendre nodes and weights on the interval."""
        rule = gauss_legendre(npts)
        t = 0.5 * (self.t0 + self.t1) + 0.5 * self.tau * rule.points
        return t, 0.5 * self.tau * rule.weights

    def moments(self, values: np.ndarray, weights: np.ndarray, times, nmax=None):
        """int g(t) phi_j(t) dt from samples ``values`` (ntime, ...) at Gauss ``times``."""
        ph = self.phi(times, nmax)
        return np.tensordot(ph * weights, values, axes=(1, 0))


def legendre_eval(basis: LegendreTimeBasis, q: int, t):
    return basis.legendre(q, t)


def legendre_l2_norm_sq(basis: LegendreTimeBasis, q: int) -> float:
    return basis.legendre_l2_norm_sq(q)


def legendre_to_phi(basis: LegendreTimeBasis, coeffs: np.ndarray) -> np.ndarray:
    """Convert coefficients in L_j to coefficients in phi_j (leading axis)."""
    s = basis.scale(np.arange(coeffs.shape[0]))
    return coeffs / s.reshape((-1,) + (1,) * (coeffs.ndim - 1))


def phi_to_legendre(basis: LegendreTimeBasis, coeffs: np.ndarray) -> np.ndarray:
    s = basis.scale(np.arange(coeffs.shape[0]))
    return coeffs * s.reshape((-1,) + (1,) * (coeffs.ndim - 1))


def legendre_derivative(basis: LegendreTimeBasis, coeffs: np.ndarray) -> np.ndarray:
    """d/dt of a mapped-Legendre series; result has one mode fewer."""
    c = np.moveaxis(coeffs, 0, -1)
    d = npleg.legder(c, axis=-1) * (2.0 / basis.tau) if coeffs.shape[0] > 1 else np.zeros(c.shape[:-1] + (1,))
    return np.moveaxis(d, -1, 0)


# ---------------------------------------------------------------------------
# H1 hierarchical shape functions on triangles
# ---------------------------------------------------------------------------

def h1_dim(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def h1_layout(p: int):
    """Local index ranges: vertices 0..2, edge k modes 2..p, then bubbles."""
    nedge = p - 1
    edge_slices = [slice(3 + k * nedge, 3 + (k + 1) * nedge) for k in range(3)]
    bubble = slice(3 + 3 * nedge, h1_dim(p))
    return edge_slices, bubble


def h1_shape(p: int, lam: np.ndarray):
    """Hierarchical H1 basis of P_p at barycentric points ``lam`` (n, 3).

    Returns values (nb, n) and derivatives with respect to the three
    barycentric coordinates (nb, 3, n). Edge functions use the local
    orientation of LOCAL_EDGES; callers flip signs by (-1)^k for reversed
    edges.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[0]
    nb = h1_dim(p)
    V = np.zeros((nb, n))
    D = np.zeros((nb, 3, n))
    L = [lam[:, 0], lam[:, 1], lam[:, 2]]
    for i in range(3):
        V[i] = L[i]
        D[i, i] = 1.0
    idx = 3
    if p >= 2:
        for (i, j) in LOCAL_EDGES:
            P, dP = legendre_table(p - 2, L[j] - L[i])
            lij = L[i] * L[j]
            for k in range(2, p + 1):
                V[idx] = lij * P[k - 2]
                D[idx, i] = L[j] * P[k - 2] - lij * dP[k - 2]
                D[idx, j] = L[i] * P[k - 2] + lij * dP[k - 2]
                idx += 1
    if p >= 3:
        b = L[0] * L[1] * L[2]
        P1, dP1 = legendre_table(p - 3, 2 * L[1] - 1)
        P2, dP2 = legendre_table(p - 3, 2 * L[2] - 1)
        for a in range(p - 2):
            for c in range(p - 2 - a):
                pp = P1[a] * P2[c]
                V[idx] = b * pp
                D[idx, 0] = L[1] * L[2] * pp
                D[idx, 1] = L[0] * L[2] * pp + b * 2 * dP1[a] * P2[c]
                D[idx, 2] = L[0] * L[1] * pp + b * P1[a] * 2 * dP2[c]
                idx += 1
    return V, D


def h1_edge_mode_degrees(p: int) -> np.ndarray:
    """Polynomial degree k of each local basis function (1 for vertices)."""
    deg = np.ones(h1_dim(p), dtype=int)
    es, bub = h1_layout(p)
    for s in es:
        deg[s] = np.arange(2, p + 1)
    deg[bub] = 3
    return deg


class SimplexScalarBasis:
    """Hierarchical basis of P_p on one triangle, grouped for the minimum rule."""

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("degree must be >= 1")
        self.p = p
        self.dim = h1_dim(p)
        self.edge_slices, self.bubble = h1_layout(p)

    def __call__(self, lam):
        return h1_shape(self.p, lam)


# ---------------------------------------------------------------------------
# scaled Legendre-product bases for broken spaces
# ---------------------------------------------------------------------------

def scalar_dim(p: int) -> int:
    return (p + 1) * (p + 2) // 2 if p >= 0 else 0


def element_frame(vertices: np.ndarray):
    """Centroid and diameter used to scale local polynomial bases."""
    c = vertices.mean(axis=0)
    h = max(np.linalg.norm(vertices[i] - vertices[j]) for i, j in LOCAL_EDGES)
    return c, h


def triangle_map(vertices: np.ndarray, ref_points: np.ndarray):
    J = np.column_stack([vertices[1] - vertices[0], vertices[2] - vertices[0]])
    x = vertices[0] + ref_points @ J.T
    return x, abs(np.linalg.det(J))


def affine_jacobians(vertices: np.ndarray) -> np.ndarray:
    """Jacobians (m, 2, 2) of the maps from the reference triangle; ``vertices`` is (m, 3, 2)."""
    return np.stack([vertices[:, 1] - vertices[:, 0], vertices[:, 2] - vertices[:, 0]], axis=-1)


def reference_coordinates(vertices: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reference coordinates of points ``x`` (m, n, 2) in triangles ``vertices`` (m, 3, 2)."""
    J = affine_jacobians(vertices)
    d = x - vertices[:, None, 0, :]
    return np.linalg.solve(J[:, None], d[..., None])[..., 0]


def _dubiner(p: int, xhat: np.ndarray, grad: bool = False):
    """Unnormalized Dubiner basis on the reference triangle, ordered by total degree.

    psi_ij = t^i P_i(u / t) P_j^{(2i+1, 0)}(2y - 1) with u = 2x + y - 1 and
    t = 1 - y; the first factor is evaluated by the scaled Legendre
    recurrence, so no collapsed coordinate (singular at the top vertex) is
    formed.
    """
    x, y = xhat[:, 0], xhat[:, 1]
    n = len(x)
    u, t = 2.0 * x + y - 1.0, 1.0 - y
    Q = [np.ones(n), u]
    dQ = [np.zeros((2, n)), np.stack([np.full(n, 2.0), np.ones(n)])]
    dt = np.array([0.0, -1.0])[:, None]
    du = np.array([2.0, 1.0])[:, None]
    for i in range(1, p):
        Q.append(((2 * i + 1) * u * Q[i] - i * t ** 2 * Q[i - 1]) / (i + 1))
        dQ.append(((2 * i + 1) * (du * Q[i] + u * dQ[i]) - i * (2 * t * dt * Q[i - 1] + t ** 2 * dQ[i - 1]))
                  / (i + 1))
    s = 2.0 * y - 1.0
    vals, grads = [], []
    for tot in range(p + 1):
        for i in range(tot, -1, -1):
            j = tot - i
            R = eval_jacobi(j, 2 * i + 1, 0, s)
            vals.append(Q[i] * R)
            if grad:
                dR = 0.5 * (j + 2 * i + 2) * eval_jacobi(j - 1, 2 * i + 2, 1, s) if j > 0 else np.zeros(n)
                g = dQ[i] * R
                g[1] += Q[i] * 2.0 * dR
                grads.append(g)
    V = np.array(vals).reshape(-1, n)
    return (V, np.array(grads).reshape(-1, 2, n)) if grad else V


_REF_NORMS: dict = {}


def reference_normalization(p: int) -> np.ndarray:
    """Scale factors making the Dubiner functions orthonormal for (1/|K|) int_K."""
    c = _REF_NORMS.get(p)
    if c is None:
        rule = triangle_rule(2 * max(p, 0) + 2)
        S = _dubiner(p, rule.points)
        c = 1.0 / np.sqrt(2.0 * (S ** 2) @ rule.weights)
        _REF_NORMS[p] = c
    return c


def simplex_orthonormal(p: int, xhat: np.ndarray, grad: bool = False):
    """Orthonormal basis of P_p (mean-square normalized) at reference points ``xhat`` (n, 2).

    Functions are ordered by total degree, so the last p + 1 have exact
    degree p. Gradients are with respect to the reference coordinates.
    """
    if p < 0:
        n = xhat.shape[0]
        return (np.zeros((0, n)), np.zeros((0, 2, n))) if grad else np.zeros((0, n))
    c = reference_normalization(p)
    if grad:
        S, G = _dubiner(p, xhat, grad=True)
        return c[:, None] * S, c[:, None, None] * G
    return c[:, None] * _dubiner(p, xhat)


class OrthonormalScalarBasis:
    """L2(K)-orthonormal basis of P_p on a triangle."""

    def __init__(self, vertices: np.ndarray, p: int):
        self.vertices = np.asarray(vertices, dtype=float)
        self.p = p
        self.dim = scalar_dim(p)
        self.J = affine_jacobians(self.vertices[None])[0]
        self.area = 0.5 * abs(np.linalg.det(self.J))

    def _ref(self, x):
        return reference_coordinates(self.vertices[None], np.atleast_2d(x)[None])[0]

    def __call__(self, x):
        return simplex_orthonormal(self.p, self._ref(x)) / np.sqrt(self.area)

    def grad(self, x):
        _, G = simplex_orthonormal(self.p, self._ref(x), grad=True)
        return np.einsum("idn,de->ien", G, np.linalg.inv(self.J)) / np.sqrt(self.area)


# ---------------------------------------------------------------------------
# Raviart-Thomas-Nedelec spaces
# ---------------------------------------------------------------------------

def rtn_dim(p: int) -> int:
    return (p + 1) * (p + 3)


def rtn_primal(p: int, xhat: np.ndarray):
    """Spanning basis P_p(R^2) + xhat * (degree-p part) on the reference triangle.

    The P_p^2 part uses the orthonormal reference basis; the remaining p+1
    fields are xhat times the orthonormal functions of exact degree p, whose
    leading homogeneous parts are independent. Returns values (dim, 2, n)
    and the reference divergence (dim, n).
    """
    n = xhat.shape[0]
    S, dS = simplex_orthonormal(p, xhat, grad=True)
    ns = S.shape[0]
    dim = rtn_dim(p)
    V = np.zeros((dim, 2, n))
    Dv = np.zeros((dim, n))
    V[:ns, 0] = S
    V[ns:2 * ns, 1] = S
    Dv[:ns] = dS[:, 0]
    Dv[ns:2 * ns] = dS[:, 1]
    top, dtop = S[ns - (p + 1):], dS[ns - (p + 1):]
    V[2 * ns:, 0] = xhat[:, 0] * top
    V[2 * ns:, 1] = xhat[:, 1] * top
    Dv[2 * ns:] = 2.0 * top + xhat[:, 0] * dtop[:, 0] + xhat[:, 1] * dtop[:, 1]
    return V, Dv


def rtn_physical(p: int, vertices: np.ndarray, x: np.ndarray):
    """Primal RTN fields on physical triangles by the (diameter-scaled) affine Piola map.

    ``vertices`` is (m, 3, 2) and ``x`` is (m, n, 2); returns values
    (m, dim, 2, n) and divergences (m, dim, n).
    """
    m, n = x.shape[:2]
    J = affine_jacobians(vertices)
    h = np.max(np.linalg.norm(vertices[:, [0, 1, 2]] - vertices[:, [1, 2, 0]], axis=-1), axis=1)
    xh = reference_coordinates(vertices, x)
    Vr, Dr = rtn_primal(p, xh.reshape(-1, 2))
    dim = Vr.shape[0]
    Vr = Vr.reshape(dim, 2, m, n)
    Dr = Dr.reshape(dim, m, n)
    V = np.einsum("mab,kbmn->mkan", J / h[:, None, None], Vr)
    D = Dr.transpose(1, 0, 2) / h[:, None, None]
    return V, D


def edge_orientation(gids) -> np.ndarray:
    """True where local edge k runs from lower to higher global vertex id."""
    return np.array([gids[i] < gids[j] for i, j in LOCAL_EDGES])


class RTNBasis:
    """Nodal basis of RTN_p on one triangle.

    Degrees of freedom: edge moments (1/|e|) int_e v.n_e l_m ds against
    orthonormal Legendre polynomials l_m, m = 0..p, with the edge
    parametrized and its normal fixed by the global vertex ordering (so
    neighbours agree), plus interior moments (1/|K|) int_K (h J^{-1} v)_c r_l
    against the orthonormal reference basis of P_{p-1} (c = 1, 2).
    """

    def __init__(self, vertices, p: int, gids=(0, 1, 2)):
        self.vertices = np.asarray(vertices, dtype=float)
        self.p = int(p)
        self.dim = rtn_dim(p)
        self.gids = tuple(int(g) for g in gids)
        self.center, self.h = element_frame(self.vertices)
        self.J = affine_jacobians(self.vertices[None])[0]
        self.area = 0.5 * abs(np.linalg.det(self.J))
        D = self._dof_matrix(self._primal_eval)
        self.C = np.linalg.inv(D)

    def _ref(self, x):
        return reference_coordinates(self.vertices[None], np.atleast_2d(x)[None])[0]

    def _primal_eval(self, x):
        V, D = rtn_physical(self.p, self.vertices[None], np.atleast_2d(x)[None])
        return V[0], D[0]

    def edge_frame(self, k):
        i, j = LOCAL_EDGES[k]
        if self.gids[i] > self.gids[j]:
            i, j = j, i
        xs, xt = self.vertices[i], self.vertices[j]
        d = xt - xs
        length = np.linalg.norm(d)
        normal = np.array([d[1], -d[0]]) / length
        return xs, xt, normal, length

    def _dof_matrix(self, evaluate):
        p = self.p
        rows = []
        g = gauss_legendre(p + 2)
        P, _ = legendre_table(p, g.points)
        P = P * np.sqrt(2.0 * np.arange(p + 1) + 1.0)[:, None]
        for k in range(3):
            xs, xt, normal, _ = self.edge_frame(k)
            x = 0.5 * (xs + xt) + np.outer(g.points, 0.5 * (xt - xs))
            V, _ = evaluate(x)
            vn = np.einsum("adn,d->an", V, normal)
            rows.append(0.5 * (P * g.weights) @ vn.T)
        if p > 0:
            rule = triangle_rule(2 * p + 2)
            x, _ = triangle_map(self.vertices, rule.points)
            w = 2.0 * rule.weights
            V, _ = evaluate(x)
            Vc = np.einsum("ab,kbn->kan", np.linalg.inv(self.J) * self.h, V)
            R = simplex_orthonormal(p - 1, rule.points)
            for c in range(2):
                rows.append((R * w) @ Vc[:, c].T)
        return np.vstack(rows)

    def eval(self, x):
        """Nodal basis values (dim, 2, n) at physical points ``x``."""
        V, _ = self._primal_eval(np.atleast_2d(x))
        return np.einsum("ji,jdn->idn", self.C, V)

    def div(self, x):
        _, Dv = self._primal_eval(np.atleast_2d(x))
        return self.C.T @ Dv

    def interpolate(self, field):
        """Coefficients from applying the degrees of freedom to a vector callable."""
        def evaluate(x):
            return field(x)[None], None
        return self._dof_matrix(evaluate)[:, 0]

    def divergence(self, coefficients) -> "ScalarPolynomial":
        """Exact divergence as an element polynomial of degree p."""
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coefficients, got {coefficients.shape}")
        basis = OrthonormalScalarBasis(self.vertices, self.p)
        rule = triangle_rule(2 * self.p + 2)
        x, detJ = triangle_map(self.vertices, rule.points)
        vals = coefficients @ self.div(x)
        c = basis(x) @ (vals * rule.weights * detJ)
        return ScalarPolynomial(basis, c)


@dataclass
class ScalarPolynomial:
    basis: OrthonormalScalarBasis
    coefficients: np.ndarray

    def __call__(self, x):
        return self.coefficients @ self.basis(x)


def rtn_divergence(basis: RTNBasis, coefficients) -> ScalarPolynomial:
    return basis.divergence(coefficients)
