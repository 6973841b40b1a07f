"""Finite element spaces and assembly.

* :class:`HpSpace`: continuous piecewise polynomials of variable degree with
  the edge minimum rule and optional homogeneous Dirichlet conditions.
* Batched element tables for Raviart-Thomas-Nedelec fluxes and broken
  pressures at quadrature points.
* :class:`PatchMixedSpace` and the dense saddle-point solver used by the
  local flux problems.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .basis import (LOCAL_EDGES, RTNBasis, element_frame, h1_dim, h1_layout, h1_shape, rtn_dim,
                    rtn_physical, scalar_dim, simplex_orthonormal, triangle_rule)
from .mesh import MeshLevel, Patch


class SaddlePointError(RuntimeError):
    """Incompatible data or a singular local mixed system."""


# ---------------------------------------------------------------------------
# quadrature on a mesh
# ---------------------------------------------------------------------------

class MeshQuadrature:
    """A triangle rule mapped to every element of a mesh."""

    def __init__(self, mesh: MeshLevel, degree: int):
        self.mesh = mesh
        self.degree = int(degree)
        self.rule = triangle_rule(self.degree)
        self.points = mesh.map_points(self.rule.points)  # (nel, nq, 2)
        self.weights = 2.0 * mesh.areas[:, None] * self.rule.weights[None, :]
        self.lam = self.rule.barycentric  # (nq, 3), same on each element

    @property
    def nq(self) -> int:
        return len(self.rule.weights)

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, 2)

    @property
    def flat_weights(self) -> np.ndarray:
        return self.weights.ravel()

    def own_locations(self):
        """(element, barycentric) pairs for evaluating spaces on this mesh."""
        nel = self.mesh.n_elements
        return np.repeat(np.arange(nel), self.nq), np.tile(self.lam, (nel, 1))

    def locations_in(self, coarse: MeshLevel, parent: np.ndarray):
        """(element, barycentric) pairs in a coarser mesh containing this one."""
        elems = np.repeat(np.asarray(parent), self.nq)
        lam = coarse.barycentric(elems, self.flat_points)
        return elems, lam

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    def element_integrals(self, values) -> np.ndarray:
        return np.sum(self.weights * values, axis=-1)


# ---------------------------------------------------------------------------
# hp H1 space
# ---------------------------------------------------------------------------

class HpSpace:
    """H1-conforming space with per-element degrees and the edge minimum rule.

    Local basis functions follow :func:`h1_shape`; ``l2g[K, i]`` is the global
    dof of local function ``i`` (or -1 when it is dropped by the minimum rule
    or by the Dirichlet condition) and ``sign[K, i]`` its orientation sign.
    """

    def __init__(self, mesh: MeshLevel, degrees, dirichlet: bool = True):
        self.mesh = mesh
        nel = mesh.n_elements
        self.degrees = np.broadcast_to(np.asarray(degrees, dtype=np.int64), (nel,)).copy()
        if np.any(self.degrees < 1):
            raise ValueError("polynomial degrees must be >= 1")
        self.dirichlet = bool(dirichlet)
        self._number()

    def _number(self):
        mesh = self.mesh
        deg = self.degrees
        pmax = int(deg.max())
        nel = mesh.n_elements
        tri = mesh.triangles
        keep_v = ~mesh.boundary_vertex_mask if self.dirichlet else np.ones(mesh.n_vertices, bool)
        vdof = -np.ones(mesh.n_vertices, dtype=np.int64)
        vdof[keep_v] = np.arange(keep_v.sum())
        count = int(keep_v.sum())

        ee = mesh.edge_elems
        other = np.where(ee[:, 1] >= 0, ee[:, 1], ee[:, 0])
        self.edge_degrees = np.minimum(deg[ee[:, 0]], deg[other])
        keep_e = ~mesh.boundary_edge_mask if self.dirichlet else np.ones(len(mesh.edges), bool)
        n_edge_modes = np.where(keep_e, self.edge_degrees - 1, 0)
        edge_start = count + np.concatenate([[0], np.cumsum(n_edge_modes)[:-1]])
        count += int(n_edge_modes.sum())

        nbub = (deg - 1) * (deg - 2) // 2
        bub_start = count + np.concatenate([[0], np.cumsum(nbub)[:-1]])
        count += int(nbub.sum())
        self.ndof = count

        nloc = h1_dim(pmax)
        l2g = -np.ones((nel, nloc), dtype=np.int64)
        sign = np.ones((nel, nloc))
        l2g[:, :3] = vdof[tri]
        for p in np.unique(deg):
            sel = np.flatnonzero(deg == p)
            edge_slices, bub = h1_layout(int(p))
            for k, (i, j) in enumerate(LOCAL_EDGES):
                e = mesh.elem_edges[sel, k]
                flipped = tri[sel, i] > tri[sel, j]
                for m in range(int(p) - 1):
                    col = edge_slices[k].start + m
                    active = (m < n_edge_modes[e])
                    l2g[sel, col] = np.where(active, edge_start[e] + m, -1)
                    if m % 2 == 1:
                        sign[sel, col] = np.where(flipped, -1.0, 1.0)
            nb = bub.stop - bub.start
            if nb:
                l2g[sel, bub.start:bub.stop] = bub_start[sel, None] + np.arange(nb)[None, :]
        self.l2g = l2g
        self.sign = sign

    @property
    def pmax(self) -> int:
        return int(self.degrees.max())

    @staticmethod
    def expected_dimension(mesh: MeshLevel, degrees, dirichlet=True) -> int:
        """Closed-form count: vertices + sum over edges (p_e - 1) + bubbles."""
        deg = np.broadcast_to(np.asarray(degrees), (mesh.n_elements,))
        ee = mesh.edge_elems
        other = np.where(ee[:, 1] >= 0, ee[:, 1], ee[:, 0])
        pe = np.minimum(deg[ee[:, 0]], deg[other])
        if dirichlet:
            nv = int((~mesh.boundary_vertex_mask).sum())
            ne = int((pe - 1)[~mesh.boundary_edge_mask].sum())
        else:
            nv = mesh.n_vertices
            ne = int((pe - 1).sum())
        return nv + ne + int(((deg - 1) * (deg - 2) // 2).sum())

    def evaluate(self, elems, lam, grad: bool = True):
        """Sparse evaluation matrices at points given by element and barycentrics.

        Returns ``V`` (npts x ndof) and, if requested, ``(Gx, Gy)``.
        """
        elems = np.asarray(elems, dtype=np.int64)
        lam = np.asarray(lam, dtype=float)
        npts = len(elems)
        rows, cols, vals, gxs, gys = [], [], [], [], []
        pts_deg = self.degrees[elems]
        glam = self.mesh.grad_lambda
        for p in np.unique(pts_deg):
            sel = np.flatnonzero(pts_deg == p)
            V, D = h1_shape(int(p), lam[sel])
            nb = V.shape[0]
            e = elems[sel]
            L = self.l2g[e, :nb]
            S = self.sign[e, :nb]
            mask = L >= 0
            r = np.broadcast_to(sel[:, None], L.shape)
            rows.append(r[mask])
            cols.append(L[mask])
            vals.append((V.T * S)[mask])
            if grad:
                G = np.einsum("bkn,nkd->nbd", D, glam[e]) * S[:, :, None]
                gxs.append(G[:, :, 0][mask])
                gys.append(G[:, :, 1][mask])
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)

        def build(v):
            v = np.concatenate(v) if v else np.zeros(0)
            return sp.csr_matrix((v, (rows, cols)), shape=(npts, self.ndof))

        Vm = build(vals)
        if not grad:
            return Vm
        return Vm, build(gxs), build(gys)

    def evaluate_on(self, quad: MeshQuadrature, parent=None, grad=True):
        """Evaluation matrices at the points of ``quad`` (on this mesh or a refinement)."""
        if parent is None:
            if quad.mesh is not self.mesh:
                raise ValueError("parent map required for a different mesh")
            elems, lam = quad.own_locations()
        else:
            elems, lam = quad.locations_in(self.mesh, parent)
        return self.evaluate(elems, lam, grad=grad)

    def default_quadrature(self, extra: int = 4) -> MeshQuadrature:
        return MeshQuadrature(self.mesh, 2 * self.pmax + extra)


def assemble_stiffness(space: HpSpace, quad: MeshQuadrature | None = None, parent=None) -> sp.csr_matrix:
    quad = quad or space.default_quadrature()
    _, Gx, Gy = space.evaluate_on(quad, parent)
    W = sp.diags(quad.flat_weights)
    A = Gx.T @ W @ Gx + Gy.T @ W @ Gy
    return ((A + A.T) * 0.5).tocsr()


def assemble_mass(space: HpSpace, quad: MeshQuadrature | None = None, parent=None) -> sp.csr_matrix:
    quad = quad or space.default_quadrature()
    V = space.evaluate_on(quad, parent, grad=False)
    M = V.T @ sp.diags(quad.flat_weights) @ V
    return ((M + M.T) * 0.5).tocsr()


def assemble_load(space: HpSpace, values: np.ndarray, quad: MeshQuadrature, parent=None) -> np.ndarray:
    V = space.evaluate_on(quad, parent, grad=False)
    return V.T @ (quad.flat_weights * np.asarray(values).ravel())


def l2_projection(space: HpSpace, func, quad: MeshQuadrature | None = None) -> np.ndarray:
    """Coefficients of the L2-orthogonal projection of ``func(x)`` onto ``space``."""
    from scipy.sparse.linalg import spsolve
    quad = quad or space.default_quadrature(extra=6)
    if space.ndof == 0:
        return np.zeros(0)
    M = assemble_mass(space, quad)
    b = assemble_load(space, func(quad.flat_points), quad)
    return np.atleast_1d(spsolve(M.tocsc(), b))


def transfer(src: HpSpace, coeffs, dst: HpSpace, parent=None) -> np.ndarray:
    """Exact L2 projection of a function of ``src`` onto a space ``dst`` containing it.

    ``dst`` must live on a refinement of ``src.mesh`` (``parent`` maps dst
    elements into src elements) with degrees at least as large.
    """
    from scipy.sparse.linalg import splu
    if dst.mesh is src.mesh and np.array_equal(dst.degrees, src.degrees) and dst.dirichlet == src.dirichlet:
        return np.array(coeffs, copy=True)
    if parent is None:
        from .mesh import parent_map
        parent = parent_map(dst.mesh, src.mesh)
    quad = MeshQuadrature(dst.mesh, 2 * max(dst.pmax, src.pmax) + 2)
    Vd = dst.evaluate_on(quad, grad=False)
    Vs = src.evaluate_on(quad, parent, grad=False)
    W = sp.diags(quad.flat_weights)
    M = (Vd.T @ W @ Vd).tocsc()
    return splu(M).solve(Vd.T @ (W @ (Vs @ np.asarray(coeffs))))


# ---------------------------------------------------------------------------
# batched RTN and pressure tables
# ---------------------------------------------------------------------------

_RTN_COEFF_CACHE: dict = {}


def rtn_coefficients(vertices: np.ndarray, p: int, gids) -> np.ndarray:
    """Nodal-from-primal matrix of RTN_p on one triangle.

    The matrix depends only on the shape of the triangle up to translation
    and scaling and on the edge orientations, so it is cached by that
    signature.
    """
    c, h = element_frame(vertices)
    rel = np.round((vertices - c) / h, 12)
    orient = tuple(bool(gids[i] < gids[j]) for i, j in LOCAL_EDGES)
    key = (p, rel.tobytes(), orient)
    C = _RTN_COEFF_CACHE.get(key)
    if C is None:
        C = RTNBasis(vertices, p, gids).C
        _RTN_COEFF_CACHE[key] = C
    return C


@dataclass
class ElementTables:
    """RTN_p nodal basis and orthonormal P_p pressure basis at quadrature points.

    Arrays are indexed by position in ``elems``: ``flux`` (m, dim, 2, nq),
    ``div`` (m, dim, nq), ``pressure`` (m, ns, nq), ``mass`` (m, dim, dim),
    ``coupling`` (m, ns, dim) with entries (div v_j, q_i), ``pressure_mean``
    (m, ns) with entries (q_i, 1).
    """

    p: int
    elems: np.ndarray
    flux: np.ndarray
    div: np.ndarray
    pressure: np.ndarray
    mass: np.ndarray
    coupling: np.ndarray
    pressure_mean: np.ndarray

    @cached_property
    def position(self) -> dict[int, int]:
        return {int(e): i for i, e in enumerate(self.elems)}


def element_tables(mesh: MeshLevel, elems, p: int, quad: MeshQuadrature) -> ElementTables:
    elems = np.asarray(elems, dtype=np.int64)
    m = len(elems)
    X = mesh.vertices[mesh.triangles[elems]]
    dim = rtn_dim(p)
    Cs = np.empty((m, dim, dim))
    for k in range(m):
        Cs[k] = rtn_coefficients(X[k], p, mesh.triangles[elems[k]])
    x = quad.points[elems]  # (m, nq, 2)
    Vp, Dp = rtn_physical(p, X, x)
    flux = np.einsum("mji,mjdq->midq", Cs, Vp)
    div = np.einsum("mji,mjq->miq", Cs, Dp)
    w = quad.weights[elems]
    # the reference orthonormal basis stays orthonormal under affine maps
    S = simplex_orthonormal(p, quad.rule.points)  # (ns, nq)
    Q = S[None] / np.sqrt(mesh.areas[elems])[:, None, None]
    mass = np.einsum("midq,mjdq,mq->mij", flux, flux, w)
    coupling = np.einsum("miq,mjq,mq->mij", Q, div, w)
    pmean = np.einsum("miq,mq->mi", Q, w)
    return ElementTables(p, elems, flux, div, Q, mass, coupling, pmean)


# ---------------------------------------------------------------------------
# patch mixed spaces
# ---------------------------------------------------------------------------

class PatchMixedSpace:
    """RTN_{p_a} fluxes with zero normal trace on Gamma_a, broken P_{p_a} pressures.

    Flux dofs: ``flux_dofs[k, i]`` is the patch index of local RTN dof ``i``
    of the k-th submesh element, -1 for eliminated (Gamma_a) edge dofs.
    Pressure dofs are element blocks of size ``ns``.
    """

    def __init__(self, patch: Patch, mesh: MeshLevel):
        self.patch = patch
        self.mesh = mesh
        self.p = p = patch.p
        elems = patch.elements
        m = len(elems)
        nE = p + 1
        self.dim = rtn_dim(p)
        self.ns = scalar_dim(p)
        gamma = set(int(e) for e in patch.gamma_edges)
        edge_index: dict[int, int] = {}
        dofs = -np.ones((m, self.dim), dtype=np.int64)
        count = 0
        for k, el in enumerate(elems):
            for j in range(3):
                e = int(mesh.elem_edges[el, j])
                if e in gamma:
                    continue
                if e not in edge_index:
                    edge_index[e] = count
                    count += nE
                dofs[k, j * nE:(j + 1) * nE] = edge_index[e] + np.arange(nE)
        nint = self.dim - 3 * nE
        for k in range(m):
            dofs[k, 3 * nE:] = count + np.arange(nint)
            count += nint
        self.flux_dofs = dofs
        self.n_flux = count
        self.n_pressure = m * self.ns
        self.constrained = patch.is_interior

    def signature(self, quad_degree: int):
        """Translation-invariant key identifying the local saddle matrix."""
        mesh = self.mesh
        elems = self.patch.elements
        tri = mesh.triangles[elems]
        verts, inv = np.unique(tri, return_inverse=True)
        X = mesh.vertices[verts]
        rel = np.round((X - X.min(axis=0)) * 1e10).astype(np.int64)
        rank = inv.reshape(tri.shape)  # ranks preserve the vertex ordering
        scale = np.round(np.log2(mesh.diameters[elems].max()) * 1e6)
        return (self.p, self.constrained, quad_degree, scale, rel.tobytes(), rank.tobytes(),
                self.flux_dofs.tobytes())


def assemble_patch_saddle(pm: PatchMixedSpace, tables: ElementTables):
    """Flux mass matrix, divergence coupling and pressure means of a patch."""
    pos = np.array([tables.position[int(e)] for e in pm.patch.elements])
    M = np.zeros((pm.n_flux, pm.n_flux))
    B = np.zeros((pm.n_pressure, pm.n_flux))
    c = np.zeros(pm.n_pressure)
    ns = pm.ns
    for k, t in enumerate(pos):
        d = pm.flux_dofs[k]
        act = d >= 0
        da = d[act]
        M[np.ix_(da, da)] += tables.mass[t][np.ix_(act, act)]
        B[k * ns:(k + 1) * ns, da] += tables.coupling[t][:, act]
        c[k * ns:(k + 1) * ns] = tables.pressure_mean[t]
    return M, B, c


class SaddleSystem:
    """Factorized KKT matrix [[M, -B^T, 0], [-B, 0, c], [0, c^T, 0]].

    The last row and column (mean-value multiplier) are present only for
    constrained (interior) patches.
    """

    def __init__(self, M, B, c=None, check_tol: float = 1e-9):
        self.nf = M.shape[0]
        self.np_ = B.shape[0]
        self.c = c
        self.check_tol = check_tol
        n = self.nf + self.np_ + (1 if c is not None else 0)
        K = np.zeros((n, n))
        K[:self.nf, :self.nf] = M
        K[:self.nf, self.nf:self.nf + self.np_] = -B.T
        K[self.nf:self.nf + self.np_, :self.nf] = -B
        if c is not None:
            K[self.nf:self.nf + self.np_, -1] = c
            K[-1, self.nf:self.nf + self.np_] = c
        self.K = K
        self.lu = sla.lu_factor(K, check_finite=False)
        if np.any(np.abs(np.diag(self.lu[0])) < 1e-14 * np.abs(K).max()):
            raise SaddlePointError("singular local mixed system")

    def solve(self, rhs_flux, rhs_pressure):
        """Solve for flux and multiplier; columns of the right-hand sides are independent modes."""
        rf = np.asarray(rhs_flux, dtype=float)
        rp = np.asarray(rhs_pressure, dtype=float)
        vec = rf.ndim == 1
        rf = rf.reshape(self.nf, -1)
        rp = rp.reshape(self.np_, -1)
        if self.c is not None:
            gap = np.abs(self.c @ rp)
            scale = np.linalg.norm(self.c) * np.linalg.norm(rp, axis=0) + 1e-300
            if np.any(gap > self.check_tol * np.maximum(scale, 1e-300)) and np.any(gap > 1e-300):
                raise SaddlePointError(
                    f"incompatible divergence data: |(g, 1)| = {gap.max():.3e}")
        rhs = np.vstack([rf, -rp] + ([np.zeros((1, rf.shape[1]))] if self.c is not None else []))
        sol = sla.lu_solve(self.lu, rhs, check_finite=False)
        for _ in range(2):  # iterative refinement against the nodal RTN conditioning
            sol += sla.lu_solve(self.lu, rhs - self.K @ sol, check_finite=False)
        sigma = sol[:self.nf]
        r = sol[self.nf:self.nf + self.np_]
        if vec:
            return sigma[:, 0], r[:, 0]
        return sigma, r

    def residual(self, sigma, r, rhs_flux, rhs_pressure) -> float:
        sigma = np.asarray(sigma).reshape(self.nf, -1)
        r = np.asarray(r).reshape(self.np_, -1)
        rf = np.asarray(rhs_flux).reshape(self.nf, -1)
        rp = np.asarray(rhs_pressure).reshape(self.np_, -1)
        M = self.K[:self.nf, :self.nf]
        B = -self.K[self.nf:self.nf + self.np_, :self.nf]
        res1 = M @ sigma - B.T @ r - rf
        res2 = B @ sigma - rp
        if self.c is not None:
            # the constrained equation holds up to the mean-value direction
            res2 = res2 - np.outer(self.c, self.c @ res2) / (self.c @ self.c)
        den = np.linalg.norm(rf) + np.linalg.norm(rp) + 1e-300
        return float((np.linalg.norm(res1) + np.linalg.norm(res2)) / den)


def solve_saddle(M, B, rhs_flux, rhs_pressure, constraint=None, check_tol=1e-9):
    """Minimize 1/2 s^T M s - rhs_flux^T s subject to B s = rhs_pressure.

    With ``constraint`` (a vector c), the divergence condition is imposed
    only on the complement of c, and ``rhs_pressure`` must satisfy
    c^T rhs_pressure = 0 up to ``check_tol`` relative.
    """
    return SaddleSystem(np.asarray(M), np.asarray(B), constraint, check_tol).solve(rhs_flux, rhs_pressure)
