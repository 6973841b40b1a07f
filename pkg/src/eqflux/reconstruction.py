"""Radau reconstruction, temporal jumps and the data approximations.

Quantities of a step live at the quadrature points of its common-refinement
mesh and are stored as coefficient arrays over the orthonormal temporal
basis phi_j: ``(modes, npts)`` for scalars and ``(modes, npts, 2)`` for
gradients.

The reconstruction on I_n is

    I u = u + ((-1)^q / 2) (L_q - L_{q+1}) J,   J = u(t_{n-1}) - u(t_{n-1}^+),

which has one temporal degree more than u and is continuous in time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (LegendreTimeBasis, legendre_derivative, legendre_to_phi, phi_to_legendre,
                    reference_coordinates, simplex_orthonormal)
from .solver import DiscreteSolution, StepGeometry
from .spaces import HpSpace, transfer


def jump_energy_coefficient(tau: float, q: int) -> float:
    """int_{I_n} |grad(u - I u)|^2 dt divided by |grad J|^2."""
    return tau * (q + 1) / ((2 * q + 1) * (2 * q + 3))


def radau_correction(basis: LegendreTimeBasis) -> np.ndarray:
    """phi-coefficients (length q+2) of ((-1)^q / 2)(L_q - L_{q+1})."""
    q = basis.degree
    s = basis.scale(np.arange(q + 2))
    c = np.zeros(q + 2)
    sgn = 0.5 * (-1.0) ** q
    c[q] = sgn / s[q]
    c[q + 1] = -sgn / s[q + 1]
    return c


def radau_modes(basis: LegendreTimeBasis, modes: np.ndarray, jump: np.ndarray) -> np.ndarray:
    """phi-coefficients (q+2, ...) of I u from those of u (q+1, ...) and the jump."""
    q = basis.degree
    out = np.zeros((q + 2,) + modes.shape[1:])
    out[:q + 1] = modes
    out += np.multiply.outer(radau_correction(basis), jump)
    return out


def time_derivative_modes(basis: LegendreTimeBasis, modes: np.ndarray) -> np.ndarray:
    """phi-coefficients of d/dt of a phi-series, truncated to one mode fewer."""
    leg = phi_to_legendre(basis, modes)
    d = legendre_derivative(basis, leg)
    return legendre_to_phi(basis, d[: modes.shape[0] - 1])


def evaluate_modes(basis: LegendreTimeBasis, modes: np.ndarray, times) -> np.ndarray:
    """Values at ``times`` of a phi-series; result (len(times), ...)."""
    ph = basis.phi(np.atleast_1d(times), modes.shape[0] - 1)
    return np.tensordot(ph.T, modes, axes=(1, 0))


@dataclass
class SpaceTimeFunction:
    """A phi-series on one interval sampled at a fixed set of points."""

    basis: LegendreTimeBasis
    values: np.ndarray
    grads: np.ndarray | None = None

    def at(self, t):
        return evaluate_modes(self.basis, self.values, t)

    def grad_at(self, t):
        return evaluate_modes(self.basis, self.grads, t)

    @property
    def degree(self) -> int:
        return self.values.shape[0] - 1


class IntervalData:
    """Solution, jump, reconstruction and f moments of one step at quadrature points."""

    def __init__(self, sol: DiscreteSolution, n: int, geom: StepGeometry, F: np.ndarray):
        self.n = n
        self.geom = geom
        self.basis = sol.partition.basis(n)
        self.q = self.basis.degree
        self.tau = self.basis.tau
        self.F = F
        self.U = sol.coeffs[n - 1]
        self.u_vals, self.u_grads = geom.values_cur(self.U)
        pv, pg = geom.values_prev(sol.end_value(n - 1))
        sv, sg = geom.values_cur(sol.start_value(n))
        self.jump_vals = pv[0] - sv[0]
        self.jump_grads = pg[0] - sg[0]
        self.Iu_vals = radau_modes(self.basis, self.u_vals, self.jump_vals)
        self.Iu_grads = radau_modes(self.basis, self.u_grads, self.jump_grads)
        self.dtIu = time_derivative_modes(self.basis, self.Iu_vals)

    @property
    def nel(self) -> int:
        return self.geom.fine.n_elements

    @property
    def nq(self) -> int:
        return self.geom.nq

    def reconstruction(self) -> SpaceTimeFunction:
        return SpaceTimeFunction(self.basis, self.Iu_vals, self.Iu_grads)

    def dt_moments_identity(self) -> np.ndarray:
        """phi_k-moments of d/dt I u via integration by parts (for cross-checks).

        int dt(I u) phi_k = int dt(u) phi_k - J phi_k(t_{n-1}^+).
        """
        C = self.basis.derivative_coupling()
        return C @ self.u_vals - np.outer(self.basis.start_values(), self.jump_vals)

    def scheme_identity_residual(self) -> float:
        """Relative residual of int (dt I u, v) + (grad u, grad v) = int (f, v) on V^n."""
        g = self.geom
        lhs = g.load(self.dtIu) + (g.A @ self.U.T).T
        rhs = g.load(self.F)
        return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), np.linalg.norm(lhs), 1e-300))

    def jump_energy(self) -> float:
        return float(np.sum(self.geom.weights * np.sum(self.jump_grads ** 2, axis=-1)))

    def reconstruction_gap_energy(self, n_time: int | None = None) -> float:
        """int_{I_n} |grad(u - I u)|^2 dt by direct temporal quadrature."""
        b = self.basis
        t, w = b.gauss(n_time or self.q + 3)
        gu = evaluate_modes(b, self.u_grads, t)
        gI = evaluate_modes(b, self.Iu_grads, t)
        diff = np.sum((gu - gI) ** 2, axis=-1)
        return float(np.sum(w[:, None] * diff * self.geom.weights[None, :]))


def jump(sol: DiscreteSolution, n: int, geom: StepGeometry) -> np.ndarray:
    """Coefficients of u(t_{n-1}) - u(t_{n-1}^+) in V_h(fine mesh, max degrees)."""
    W = HpSpace(geom.fine, geom.fine_degrees)
    a = transfer(geom.space_prev, sol.end_value(n - 1), W, geom.map_prev)
    b = transfer(geom.space_cur, sol.start_value(n), W, geom.map_cur)
    return a - b


def radau_reconstruct(sol: DiscreteSolution, n: int, geom: StepGeometry, F=None) -> SpaceTimeFunction:
    F = np.zeros((sol.partition.q(n) + 1, geom.n_points)) if F is None else F
    return IntervalData(sol, n, geom, F).reconstruction()


# ---------------------------------------------------------------------------
# patch data projections and f_htau
# ---------------------------------------------------------------------------

@dataclass
class ProjectionGroup:
    """Weighted projections for all (fine element, parent vertex) pairs with patch degree p."""

    p: int
    elements: np.ndarray
    local_vertex: np.ndarray
    coeffs: np.ndarray  # (npairs, nb, q+1) in the orthonormal reference basis of the element
    values: np.ndarray  # (npairs, nq, q+1)


class PatchData:
    """Projections Pi^{a,n} f and the assembled f_htau of one step.

    Pairs (K~, i) stand for the restriction of patch a = (i-th vertex of the
    current-mesh parent of K~) to K~. The hat function psi_a on K~ is the
    i-th barycentric coordinate of the parent.
    """

    def __init__(self, geom: StepGeometry, F: np.ndarray):
        self.geom = geom
        mesh = geom.space_cur.mesh
        fine = geom.fine
        nel, nq = fine.n_elements, geom.nq
        self.q = F.shape[0] - 1
        tri = mesh.triangles[geom.map_cur]  # (nel, 3) patch vertices of each pair
        pvert = np.zeros(mesh.n_vertices, dtype=np.int64)
        np.maximum.at(pvert, tri.ravel(), np.repeat(geom.fine_degrees + 1, 3))
        self.vertex_degree = pvert
        self.pair_degree = pvert[tri]  # (nel, 3)
        self.psi = geom.lam_cur.reshape(nel, nq, 3)
        self.grad_psi = mesh.grad_lambda[geom.map_cur]  # (nel, 3, 2)
        w = geom.quad.weights
        Fq = F.reshape(self.q + 1, nel, nq)
        self.values = np.zeros((self.q + 1, nel, 3, nq))
        self.groups: dict[int, ProjectionGroup] = {}
        self.pair_row = -np.ones((nel, 3), dtype=np.int64)
        for p in np.unique(self.pair_degree):
            e, i = np.nonzero(self.pair_degree == p)
            self.pair_row[e, i] = np.arange(len(e))
            S = self._basis(int(p) - 1, e, geom.quad.points[e])  # (np, nb, nq)
            wpsi = w[e] * self.psi[e, :, i]
            G = np.einsum("pbq,pcq,pq->pbc", S, S, wpsi)
            rhs = np.einsum("pbq,jpq,pq->pbj", S, Fq[:, e, :], wpsi)
            coeffs = np.linalg.solve(G, rhs)
            vals = np.einsum("pbq,pbj->pqj", S, coeffs)
            self.groups[int(p)] = ProjectionGroup(int(p), e, i, coeffs, vals)
            self.values[:, e, i, :] = vals.transpose(2, 0, 1)
        self.f_htau = np.einsum("jeiq,eqi->jeq", self.values, self.psi).reshape(self.q + 1, -1)

    def _basis(self, p, elems, points):
        fine = self.geom.fine
        xh = reference_coordinates(fine.vertices[fine.triangles[elems]], points)
        S = simplex_orthonormal(p, xh.reshape(-1, 2))
        return S.reshape(S.shape[0], len(elems), -1).transpose(1, 0, 2)

    def evaluate(self, elems, local_vertex, points):
        """Pi^{a,n} f modes at arbitrary points inside the given fine elements.

        ``points`` is (npairs, npts, 2); returns (npairs, npts, q+1).
        """
        elems = np.asarray(elems)
        local_vertex = np.asarray(local_vertex)
        out = np.zeros(points.shape[:2] + (self.q + 1,))
        degs = self.pair_degree[elems, local_vertex]
        for p in np.unique(degs):
            sel = np.flatnonzero(degs == p)
            g = self.groups[int(p)]
            rows = self.pair_row[elems[sel], local_vertex[sel]]
            S = self._basis(int(p) - 1, elems[sel], points[sel])
            out[sel] = np.einsum("pbq,pbj->pqj", S, g.coeffs[rows])
        return out

    def weighted_orthogonality_residual(self, F: np.ndarray) -> float:
        """max |int psi (f - Pi f) r| over the projection test functions, relative."""
        nel, nq = self.psi.shape[:2]
        w = self.geom.quad.weights
        Fq = F.reshape(self.q + 1, nel, nq)
        worst, scale = 0.0, 1e-300
        for p, g in self.groups.items():
            S = self._basis(p - 1, g.elements, self.geom.quad.points[g.elements])
            wpsi = w[g.elements] * self.psi[g.elements, :, g.local_vertex]
            diff = Fq[:, g.elements, :].transpose(1, 2, 0) - g.values
            r = np.einsum("pbq,pqj,pq->pbj", S, diff, wpsi)
            ref = np.einsum("pbq,pqj,pq->pbj", np.abs(S), np.abs(Fq[:, g.elements, :].transpose(1, 2, 0)), wpsi)
            worst = max(worst, float(np.abs(r).max()))
            scale = max(scale, float(ref.max()))
        return worst / scale

    def mean_value_residual(self, F: np.ndarray) -> np.ndarray:
        """int (f - f_htau, 1)_{K~} phi_j dt for every fine element and mode."""
        nel, nq = self.psi.shape[:2]
        w = self.geom.quad.weights
        d = (F - self.f_htau).reshape(self.q + 1, nel, nq)
        return np.einsum("jeq,eq->je", d, w)


def project_patch_data(geom: StepGeometry, F: np.ndarray) -> PatchData:
    return PatchData(geom, F)


def assemble_f_htau(patch_data: PatchData) -> np.ndarray:
    return patch_data.f_htau
