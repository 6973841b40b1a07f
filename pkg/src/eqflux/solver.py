"""DG(q)-in-time / hp-in-space time stepping for the heat equation.

On each interval the solution is expanded in the L2-orthonormal temporal
basis phi_j. Testing the scheme with phi_k v gives the block system

    sum_j [(C_kj + phi_k(t0) phi_j(t0)) M + delta_kj A] U_j
        = F_k + phi_k(t0) M_cross u(t_{n-1}),

where C_kj = int phi_j' phi_k, F_k = int (f, phi_k v) and ``M_cross`` is the
mass matrix between the current and the previous space. All spatial
integrals of a step are evaluated on the common refinement of the two meshes
with one quadrature rule, which makes cross-mesh products exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .basis import LegendreTimeBasis
from .mesh import common_refinement, same_mesh
from .spaces import (HpSpace, MeshQuadrature, assemble_load, assemble_mass, assemble_stiffness,
                     l2_projection)

Field = Callable[[np.ndarray], np.ndarray]
SpaceTimeField = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class TimePartition:
    """Nodes 0 = t_0 < ... < t_N = T with one temporal degree per interval."""

    nodes: np.ndarray
    degrees: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.degrees = np.broadcast_to(np.asarray(self.degrees, dtype=np.int64), (len(self.nodes) - 1,)).copy()
        if len(self.nodes) < 2 or self.nodes[0] != 0.0:
            raise ValueError("partition must start at t = 0 and contain an interval")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("time nodes must be strictly increasing")
        if np.any(self.degrees < 0):
            raise ValueError("temporal degrees must be nonnegative")

    @classmethod
    def uniform(cls, T: float, N: int, q: int) -> "TimePartition":
        return cls(np.linspace(0.0, T, N + 1), q)

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    def tau(self, n: int) -> float:
        return float(self.nodes[n] - self.nodes[n - 1])

    def q(self, n: int) -> int:
        return int(self.degrees[n - 1])

    def basis(self, n: int) -> LegendreTimeBasis:
        return LegendreTimeBasis(self.nodes[n - 1], self.nodes[n], self.q(n))


class StepGeometry:
    """Everything spatial about step n: meshes, spaces, quadrature and matrices.

    ``fine`` is the common refinement of the previous and the current mesh;
    its degrees are the elementwise maxima of the two spaces' degrees.
    """

    def __init__(self, space_prev: HpSpace, space_cur: HpSpace, quad_extra: int = 6):
        self.space_prev = space_prev
        self.space_cur = space_cur
        mp, mc = space_prev.mesh, space_cur.mesh
        if same_mesh(mp, mc):
            self.fine = mc
            idx = np.arange(mc.n_elements)
            self.map_prev, self.map_cur = idx, idx
        else:
            self.fine, self.map_prev, self.map_cur = common_refinement(mp, mc)
        self.fine_degrees = np.maximum(space_prev.degrees[self.map_prev], space_cur.degrees[self.map_cur])
        self.quad = MeshQuadrature(self.fine, 2 * int(self.fine_degrees.max()) + quad_extra)
        self.weights = self.quad.flat_weights
        self.lam_cur = self.quad.locations_in(mc, self.map_cur)[1]
        self.E_cur = space_cur.evaluate_on(self.quad, self.map_cur)
        self.E_prev = space_prev.evaluate_on(self.quad, self.map_prev)
        W = sp.diags(self.weights)
        V, Gx, Gy = self.E_cur
        self.M = ((V.T @ W @ V + (V.T @ W @ V).T) * 0.5).tocsc()
        self.A = ((Gx.T @ W @ Gx + Gy.T @ W @ Gy + (Gx.T @ W @ Gx + Gy.T @ W @ Gy).T) * 0.5).tocsc()
        self.M_cross = (V.T @ W @ self.E_prev[0]).tocsc()
        self._A_lu = None

    @property
    def nq(self) -> int:
        return self.quad.nq

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def stiffness_solver(self):
        if self._A_lu is None:
            self._A_lu = splu(self.A) if self.A.shape[0] else None
        return self._A_lu

    def load(self, values: np.ndarray) -> np.ndarray:
        """(values, v_i) for the current space; ``values`` (..., npts)."""
        V = self.E_cur[0]
        return (V.T @ (np.atleast_2d(values) * self.weights).T).T

    def values_cur(self, coeffs):
        V, Gx, Gy = self.E_cur
        c = np.atleast_2d(coeffs)
        return (V @ c.T).T, np.stack([(Gx @ c.T).T, (Gy @ c.T).T], axis=-1)

    def values_prev(self, coeffs):
        V, Gx, Gy = self.E_prev
        c = np.atleast_2d(coeffs)
        return (V @ c.T).T, np.stack([(Gx @ c.T).T, (Gy @ c.T).T], axis=-1)


def time_moments(f: SpaceTimeField, points: np.ndarray, basis: LegendreTimeBasis, extra: int = 6) -> np.ndarray:
    """int f(x, t) phi_j(t) dt at ``points`` by Gauss quadrature with q + ``extra`` nodes."""
    t, w = basis.gauss(basis.degree + extra)
    ph = basis.phi(t)  # (q+1, nt)
    out = np.zeros((basis.degree + 1, len(points)))
    for g in range(len(t)):
        out += np.outer(ph[:, g] * w[g], f(points, t[g]))
    return out


@dataclass
class DiscreteSolution:
    """Per-interval coefficients U^n[j, i] in the phi_j x hp basis plus the initial value."""

    partition: TimePartition
    spaces: list
    initial: np.ndarray
    coeffs: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def end_value(self, n: int) -> np.ndarray:
        """u(t_n) (left limit), coefficients in V^n; n = 0 gives the initial value."""
        if n == 0:
            return self.initial
        b = self.partition.basis(n)
        return b.end_values() @ self.coeffs[n - 1]

    def start_value(self, n: int) -> np.ndarray:
        """u(t_{n-1}^+), coefficients in V^n."""
        b = self.partition.basis(n)
        return b.start_values() @ self.coeffs[n - 1]

    def value(self, n: int, t: float) -> np.ndarray:
        b = self.partition.basis(n)
        return b.phi(np.array([t]))[:, 0] @ self.coeffs[n - 1]


def project_initial(u0: Field, space: HpSpace, quad_extra: int = 6) -> np.ndarray:
    """L2 projection of the initial datum."""
    return l2_projection(space, u0, MeshQuadrature(space.mesh, 2 * space.pmax + quad_extra))


def assemble_step_matrix(geom: StepGeometry, basis: LegendreTimeBasis) -> sp.csc_matrix:
    q = basis.degree
    C = basis.derivative_coupling()
    s0 = basis.start_values()
    T = C + np.outer(s0, s0)
    return (sp.kron(sp.csr_matrix(T), geom.M) + sp.kron(sp.identity(q + 1), geom.A)).tocsc()


def solve_timestep(geom: StepGeometry, basis: LegendreTimeBasis, prev_end: np.ndarray,
                   F: np.ndarray):
    """Solve one step given u(t_{n-1}) on the previous space and f moments at the points.

    ``F`` has shape (q+1, npts): temporal phi_k-moments of f at the step's
    quadrature points. Returns (U, relative residual).
    """
    q = basis.degree
    nd = geom.space_cur.ndof
    if nd == 0:
        return np.zeros((q + 1, 0)), 0.0
    K = assemble_step_matrix(geom, basis)
    s0 = basis.start_values()
    rhs = geom.load(F) + np.outer(s0, geom.M_cross @ prev_end)
    b = rhs.ravel()
    U = splu(K).solve(b)
    res = np.linalg.norm(K @ U - b) / max(np.linalg.norm(b), 1e-300)
    return U.reshape(q + 1, nd), float(res)


def scheme_residual(geom: StepGeometry, basis: LegendreTimeBasis, prev_end, F, U) -> float:
    """Relative residual of the scheme tested with every (phi_k, v_i) pair."""
    K = assemble_step_matrix(geom, basis)
    s0 = basis.start_values()
    rhs = (geom.load(F) + np.outer(s0, geom.M_cross @ prev_end)).ravel()
    return float(np.linalg.norm(K @ np.ravel(U) - rhs) / max(np.linalg.norm(rhs), 1e-300))


def solve(spaces: list, partition: TimePartition, f: SpaceTimeField, u0: Field,
          geometries: list | None = None, time_extra: int = 6):
    """March through all steps. ``spaces[n]`` is V^n for n = 0..N.

    Returns the solution, the per-step geometries and the f moments.
    """
    if len(spaces) != partition.N + 1:
        raise ValueError("need one space per time node")
    sol = DiscreteSolution(partition, spaces, project_initial(u0, spaces[0]))
    if geometries is None:
        geometries = [StepGeometry(spaces[n - 1], spaces[n]) for n in range(1, partition.N + 1)]
    moments = []
    for n in range(1, partition.N + 1):
        geom = geometries[n - 1]
        basis = partition.basis(n)
        F = time_moments(f, geom.quad.flat_points, basis, time_extra)
        try:
            U, res = solve_timestep(geom, basis, sol.end_value(n - 1), F)
        except RuntimeError as exc:  # pragma: no cover - singular factorization
            raise RuntimeError(f"step {n}: {exc}") from exc
        sol.coeffs.append(U)
        sol.residuals.append(res)
        moments.append(F)
    return sol, geometries, moments


def backward_euler_oracle(spaces: list, partition: TimePartition, f: SpaceTimeField, u0: Field,
                          quad_degrees: list | None = None, n_time: int = 8) -> list:
    """Nodal values u^n of implicit Euler, assembled independently of the DG code path.

    (u^n - u^{n-1}, v) + tau_n (grad u^n, grad v) = int_{I_n} (f, v) dt.
    ``quad_degrees[n-1]`` selects the spatial rule on the common refinement of
    step n (defaults to the DG solver's choice).
    """
    if np.any(partition.degrees != 0):
        raise ValueError("the implicit Euler oracle needs q_n = 0 on every interval")
    u = project_initial(u0, spaces[0])
    out = [u]
    for n in range(1, partition.N + 1):
        Vp, Vc = spaces[n - 1], spaces[n]
        fine, mp, mc = common_refinement(Vp.mesh, Vc.mesh)
        pf = max(Vp.pmax, Vc.pmax)
        deg = quad_degrees[n - 1] if quad_degrees else 2 * pf + 6
        quad = MeshQuadrature(fine, deg)
        M = assemble_mass(Vc, quad, mc)
        A = assemble_stiffness(Vc, quad, mc)
        Ec = Vc.evaluate_on(quad, mc, grad=False)
        Ep = Vp.evaluate_on(quad, mp, grad=False)
        Mx = Ec.T @ sp.diags(quad.flat_weights) @ Ep
        t0, t1 = partition.nodes[n - 1], partition.nodes[n]
        gx, gw = np.polynomial.legendre.leggauss(n_time)
        ts = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * gx
        fint = sum(0.5 * (t1 - t0) * w * f(quad.flat_points, t) for t, w in zip(ts, gw))
        b = Mx @ u + assemble_load(Vc, fint, quad, mc)
        if Vc.ndof:
            u = splu((M + (t1 - t0) * A).tocsc()).solve(b)
        else:
            u = np.zeros(0)
        out.append(u)
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_HEADER = "# eqflux solution v1"


def dump_checkpoint(sol: DiscreteSolution, path) -> None:
    """Plain-text coefficient dump.

    Layout::

        # eqflux solution v1
        partition <N>
        <t_n> <q_n>            N + 1 lines (q of interval n on line n; 0 on line 0)
        initial <ndof>
        <c_0> ... <c_ndof-1>
        step <n> <q+1> <ndof>  then q+1 lines of coefficients, one per temporal mode
    """
    P = sol.partition
    lines = [CHECKPOINT_HEADER, f"partition {P.N}"]
    lines.append(f"{float(P.nodes[0])!r} 0")
    lines += [f"{float(P.nodes[n])!r} {P.q(n)}" for n in range(1, P.N + 1)]
    lines.append(f"initial {len(sol.initial)}")
    lines.append(" ".join(repr(float(c)) for c in sol.initial))
    for n, U in enumerate(sol.coeffs, start=1):
        lines.append(f"step {n} {U.shape[0]} {U.shape[1]}")
        lines += [" ".join(repr(float(c)) for c in row) for row in U]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path, spaces: list) -> DiscreteSolution:
    rows = Path(path).read_text().splitlines()
    if rows[0] != CHECKPOINT_HEADER:
        raise ValueError("not an eqflux solution file")
    N = int(rows[1].split()[1])
    nodes, degs = [], []
    for k in range(N + 1):
        t, q = rows[2 + k].split()
        nodes.append(float(t))
        degs.append(int(q))
    part = TimePartition(np.array(nodes), np.array(degs[1:]))
    pos = 3 + N
    nd0 = int(rows[pos].split()[1])
    init = np.array([float(x) for x in rows[pos + 1].split()]) if nd0 else np.zeros(0)
    pos += 2
    coeffs = []
    for _ in range(N):
        _, n, nm, nd = rows[pos].split()
        nm, nd = int(nm), int(nd)
        U = np.array([[float(x) for x in rows[pos + 1 + j].split()] for j in range(nm)]).reshape(nm, nd)
        coeffs.append(U)
        pos += 1 + nm
    return DiscreteSolution(part, spaces, init, coeffs)
