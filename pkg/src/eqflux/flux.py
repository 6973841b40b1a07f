"""Patchwise equilibrated flux reconstruction.

For each vertex a of the current mesh, the flux is the constrained least
squares fit of tau = -psi_a grad u in RTN_{p_a} on the patch submesh,
subject to div sigma = g with

    g = psi_a (Pi^{a,n} f - dt I u) - grad psi_a . grad u.

Testing with an orthonormal temporal basis decouples the space-time problem
into q+1 spatial mixed problems sharing one matrix; that factorization is
cached across patches with the same shape.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import gauss_legendre, rtn_dim, rtn_physical
from .mesh import Patch, vertex_patches
from .reconstruction import IntervalData, PatchData, evaluate_modes
from .spaces import (ElementTables, PatchMixedSpace, SaddlePointError, SaddleSystem,
                     assemble_patch_saddle, element_tables, rtn_coefficients)


class _LRU(OrderedDict):
    def __init__(self, maxsize=400):
        super().__init__()
        self.maxsize = maxsize
        self.hits = 0
        self.misses = 0

    def fetch(self, key, build):
        if key in self:
            self.move_to_end(key)
            self.hits += 1
            return self[key]
        self.misses += 1
        val = build()
        self[key] = val
        if len(self) > self.maxsize:
            self.popitem(last=False)
        return val


_SYSTEM_CACHE = _LRU()


def clear_caches():
    _SYSTEM_CACHE.clear()


@dataclass
class PatchRHS:
    """Temporal-mode moments of the local data; columns are modes j = 0..q."""

    flux: np.ndarray      # (n_flux, q+1): (tau_j, v_i)
    pressure: np.ndarray  # (n_pressure, q+1): (g_j, r_i)
    mean: np.ndarray      # (q+1,): (g_j, 1) over the patch
    norm: np.ndarray      # (q+1,): ||g_j|| over the patch


@dataclass
class PatchSolution:
    space: PatchMixedSpace
    sigma: np.ndarray       # (n_flux, q+1)
    multiplier: np.ndarray  # (n_pressure, q+1)
    rhs: PatchRHS


class StepFluxProblem:
    """Local data for every patch of one step, ready for the mixed solves."""

    def __init__(self, idata: IntervalData, pdata: PatchData):
        self.idata = idata
        self.pdata = pdata
        geom = idata.geom
        self.geom = geom
        self.q = idata.q
        fine = geom.fine
        nel, nq = fine.n_elements, geom.nq
        self.patches: list[Patch] = vertex_patches(geom.space_cur.mesh, fine, geom.map_cur, geom.fine_degrees)
        self.tables: dict[int, ElementTables] = {}
        self.pair_flux_rhs: dict[int, np.ndarray] = {}
        self.pair_pres_rhs: dict[int, np.ndarray] = {}
        self.pair_g: dict[int, np.ndarray] = {}
        u_g = idata.u_grads.reshape(self.q + 1, nel, nq, 2)
        dt = idata.dtIu.reshape(self.q + 1, nel, nq)
        psi = pdata.psi
        gpsi = pdata.grad_psi
        w = geom.quad.weights
        for p, grp in pdata.groups.items():
            elems_p = np.unique(grp.elements)
            tab = element_tables(fine, elems_p, p, geom.quad)
            self.tables[p] = tab
            e, i = grp.elements, grp.local_vertex
            pos = np.array([tab.position[int(k)] for k in e])
            ps = psi[e, :, i]  # (np, nq)
            tau = -ps[None, :, :, None] * u_g[:, e]  # (q+1, np, nq, 2)
            g = (ps[None] * (grp.values.transpose(2, 0, 1) - dt[:, e])
                 - np.einsum("pd,jpqd->jpq", gpsi[e, i], u_g[:, e]))  # (q+1, np, nq)
            self.pair_g[p] = g
            self.pair_flux_rhs[p] = np.einsum("pidq,jpqd,pq->pij", tab.flux[pos], tau, w[e])
            self.pair_pres_rhs[p] = np.einsum("piq,jpq,pq->pij", tab.pressure[pos], g, w[e])

    def space(self, a: int) -> PatchMixedSpace:
        return PatchMixedSpace(self.patches[a], self.geom.fine)

    def rows(self, patch: Patch) -> np.ndarray:
        return self.pdata.pair_row[patch.elements, patch.local_vertex]

    def build_rhs(self, pm: PatchMixedSpace) -> PatchRHS:
        patch = pm.patch
        p = patch.p
        rows = self.rows(patch)
        R = self.pair_flux_rhs[p][rows]  # (m, dim, q+1)
        mask = pm.flux_dofs >= 0
        rf = np.zeros((pm.n_flux, self.q + 1))
        np.add.at(rf, pm.flux_dofs[mask], R[mask])
        rp = self.pair_pres_rhs[p][rows].reshape(-1, self.q + 1)
        w = self.geom.quad.weights[patch.elements]
        g = self.pair_g[p][:, rows]
        mean = np.einsum("jpq,pq->j", g, w)
        norm = np.sqrt(np.einsum("jpq,pq->j", g ** 2, w))
        return PatchRHS(rf, rp, mean, norm)

    def system(self, pm: PatchMixedSpace) -> SaddleSystem:
        tab = self.tables[pm.p]
        key = pm.signature(self.geom.quad.degree)

        def build():
            M, B, c = assemble_patch_saddle(pm, tab)
            return SaddleSystem(M, B, c if pm.constrained else None)

        return _SYSTEM_CACHE.fetch(key, build)


def build_patch_rhs(problem: StepFluxProblem, a: int, compat_tol: float = 1e-9) -> PatchRHS:
    """Local data of patch ``a`` with the interior-patch compatibility audit."""
    pm = problem.space(a)
    rhs = problem.build_rhs(pm)
    if pm.constrained:
        _check_compatibility(problem, a, rhs, compat_tol)
    return rhs


def _check_compatibility(problem, a, rhs: PatchRHS, tol):
    bad = np.abs(rhs.mean) > tol * np.maximum(rhs.norm * np.sqrt(_patch_area(problem, a)), 1e-300)
    if np.any(bad & (np.abs(rhs.mean) > 1e-300)):
        raise SaddlePointError(
            f"step {problem.idata.n}, vertex {a}: (g, 1) = {np.abs(rhs.mean).max():.3e} "
            f"violates compatibility; the discrete solution does not satisfy the scheme")


def _patch_area(problem, a) -> float:
    return float(problem.geom.fine.areas[problem.patches[a].elements].sum())


def solve_patch_flux(problem: StepFluxProblem, a: int, compat_tol: float = 1e-9) -> PatchSolution:
    """Decoupled solve: one factorization, q+1 right-hand sides."""
    pm = problem.space(a)
    rhs = problem.build_rhs(pm)
    if pm.constrained:
        _check_compatibility(problem, a, rhs, compat_tol)
    sysm = problem.system(pm)
    sigma, r = sysm.solve(rhs.flux, rhs.pressure)
    return PatchSolution(pm, sigma, r, rhs)


def solve_patch_flux_spacetime(problem: StepFluxProblem, a: int) -> np.ndarray:
    """Coupled space-time solve of the local problem (reference path).

    The temporal mass matrix and the data are formed by Gauss quadrature in
    time from time samples of the local data, and the full
    ((q+1) x local) system is solved at once.
    """
    pm = problem.space(a)
    rhs = problem.build_rhs(pm)
    sysm = problem.system(pm)
    basis = problem.idata.basis
    q = problem.q
    t, w = basis.gauss(q + 2)
    ph = basis.phi(t)  # (q+1, nt)
    Mt = (ph * w) @ ph.T
    # data sampled at time points, then tested against phi_k
    flux_t = rhs.flux @ ph  # (n_flux, nt)
    pres_t = rhs.pressure @ ph
    Ff = (flux_t * w) @ ph.T  # (n_flux, q+1)
    Fp = (pres_t * w) @ ph.T
    K = sysm.K
    n = K.shape[0]
    big = np.kron(Mt, K)
    b = np.zeros((q + 1, n))
    b[:, :sysm.nf] = Ff.T
    b[:, sysm.nf:sysm.nf + sysm.np_] = -Fp.T
    sol = np.linalg.solve(big, b.ravel()).reshape(q + 1, n)
    return sol[:, :sysm.nf].T


@dataclass
class EquilibratedFlux:
    """Flux of one step: per-pair RTN coefficients plus values at quadrature points.

    ``coeffs[p]`` is (npairs, dim, q+1) aligned with the projection group of
    patch degree p; ``values`` is (q+1, npts, 2) and ``divergence`` (q+1, npts).
    """

    problem: StepFluxProblem
    coeffs: dict
    patch_solutions: list = field(default_factory=list)
    values: np.ndarray | None = None
    divergence: np.ndarray | None = None

    @property
    def q(self) -> int:
        return self.problem.q

    def recompute(self):
        pb = self.problem
        nel, nq = pb.geom.fine.n_elements, pb.geom.nq
        vals = np.zeros((self.q + 1, nel, nq, 2))
        div = np.zeros((self.q + 1, nel, nq))
        for p, C in self.coeffs.items():
            grp = pb.pdata.groups[p]
            tab = pb.tables[p]
            pos = np.array([tab.position[int(k)] for k in grp.elements])
            v = np.einsum("pij,pidq->jpqd", C, tab.flux[pos])
            d = np.einsum("pij,piq->jpq", C, tab.div[pos])
            np.add.at(vals, (slice(None), grp.elements), v)
            np.add.at(div, (slice(None), grp.elements), d)
        self.values = vals.reshape(self.q + 1, -1, 2)
        self.divergence = div.reshape(self.q + 1, -1)
        return self

    def corrupt(self, p: int, row: int, dof: int, delta: float = 1e-3):
        """Perturb one stored coefficient (negative control for the audit)."""
        self.coeffs[p][row, dof, :] += delta
        return self.recompute()

    def evaluate(self, elem: int, points: np.ndarray) -> np.ndarray:
        """Flux modes at physical points in one fine element: (q+1, npts, 2)."""
        pb = self.problem
        fine = pb.geom.fine
        out = np.zeros((self.q + 1, len(points), 2))
        X = fine.vertices[fine.triangles[elem]]
        for i in range(3):
            p = int(pb.pdata.pair_degree[elem, i])
            row = pb.pdata.pair_row[elem, i]
            C = rtn_coefficients(X, p, fine.triangles[elem])
            Vp, _ = rtn_physical(p, X[None], np.asarray(points)[None])
            V = np.einsum("ji,jdn->idn", C, Vp[0])
            out += np.einsum("ij,idn->jnd", self.coeffs[p][row], V)
        return out


def construct_flux(idata: IntervalData, pdata: PatchData, compat_tol: float = 1e-9,
                   keep_patch_solutions: bool = False) -> EquilibratedFlux:
    """Solve every patch problem of the step (in vertex order) and assemble the flux."""
    problem = StepFluxProblem(idata, pdata)
    coeffs = {p: np.zeros((len(g.elements), rtn_dim(p), problem.q + 1)) for p, g in pdata.groups.items()}
    sols = []
    for a in range(len(problem.patches)):
        ps = solve_patch_flux(problem, a, compat_tol)
        pm = ps.space
        mask = pm.flux_dofs >= 0
        el = np.zeros((len(pm.patch.elements), pm.dim, problem.q + 1))
        el[mask] = ps.sigma[pm.flux_dofs[mask]]
        coeffs[pm.p][problem.rows(pm.patch)] = el
        if keep_patch_solutions:
            sols.append(ps)
    return EquilibratedFlux(problem, coeffs, sols).recompute()


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

@dataclass
class EquilibrationReport:
    """Residual of dt I u + div sigma - f_htau relative to a local scale."""

    element_ratio: np.ndarray  # per current-mesh element
    max_ratio: float
    max_abs: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_ratio <= self.tolerance)


def check_equilibration(flux: EquilibratedFlux, idata: IntervalData, f_htau: np.ndarray,
                        tolerance: float = 1e-9) -> EquilibrationReport:
    """Sample the equilibration residual at quadrature points in space and time.

    The local scale of K in the current mesh is the root-mean-square of
    |f_htau| + |dt I u| over K x I_n plus a floor of 1e-14 times the largest
    such scale.
    """
    geom = idata.geom
    basis = idata.basis
    t, wt = basis.gauss(idata.q + 2)
    resid = evaluate_modes(basis, idata.dtIu + flux.divergence - f_htau, t)  # (nt, npts)
    fh = evaluate_modes(basis, f_htau, t)
    dt = evaluate_modes(basis, idata.dtIu, t)
    nel_c = geom.space_cur.mesh.n_elements
    nq = geom.nq
    w = geom.weights
    amax = np.abs(resid).reshape(len(t), -1, nq).max(axis=(0, 2))
    amax_c = np.zeros(nel_c)
    np.maximum.at(amax_c, geom.map_cur, amax)

    def coarse_l2(v):
        e = np.sum(wt[:, None] * v ** 2 * w[None, :], axis=0).reshape(-1, nq).sum(axis=1)
        return np.sqrt(np.bincount(geom.map_cur, weights=e, minlength=nel_c))

    meas = np.sqrt(geom.space_cur.mesh.areas * basis.tau)
    scale = (coarse_l2(fh) + coarse_l2(dt)) / meas
    scale = scale + 1e-14 * max(scale.max(), 1e-300)
    ratio = amax_c / scale
    return EquilibrationReport(ratio, float(ratio.max()), float(amax_c.max()), tolerance)


def normal_jump_audit(flux: EquilibratedFlux, n_edges: int = 50, n_points: int = 5, seed: int = 0) -> float:
    """Largest normal-component jump of the flux across random interior fine edges."""
    fine = flux.problem.geom.fine
    rng = np.random.default_rng(seed)
    interior = np.flatnonzero(fine.edge_elems[:, 1] >= 0)
    if len(interior) == 0:
        return 0.0
    pick = rng.choice(interior, size=min(n_edges, len(interior)), replace=False)
    g = gauss_legendre(n_points)
    worst = 0.0
    for e in pick:
        a, b = fine.edges[e]
        xa, xb = fine.vertices[a], fine.vertices[b]
        d = xb - xa
        nrm = np.array([d[1], -d[0]]) / np.linalg.norm(d)
        pts = 0.5 * (xa + xb) + np.outer(g.points, 0.5 * d)
        k0, k1 = fine.edge_elems[e]
        v0 = flux.evaluate(int(k0), pts) @ nrm
        v1 = flux.evaluate(int(k1), pts) @ nrm
        worst = max(worst, float(np.abs(v0 - v1).max()))
    return worst


def telescoping_residual(problem: StepFluxProblem, f_htau: np.ndarray) -> float:
    """max |sum_a g^{a,n} - (f_htau - dt I u)| at quadrature points."""
    nel, nq = problem.geom.fine.n_elements, problem.geom.nq
    total = np.zeros((problem.q + 1, nel, nq))
    for p, g in problem.pair_g.items():
        grp = problem.pdata.groups[p]
        np.add.at(total, (slice(None), grp.elements), g)
    target = (f_htau - problem.idata.dtIu).reshape(problem.q + 1, nel, nq)
    return float(np.abs(total - target).max())


FLUX_HEADER = "# eqflux flux v1"


def dump_flux(fluxes: list, path) -> None:
    """Plain-text flux coefficients.

    Layout::

        # eqflux flux v1
        step <n> <q+1>
        pair <fine element> <local vertex> <p> <dim>   then dim lines, each with q+1 values
    """
    lines = [FLUX_HEADER]
    for n, fx in enumerate(fluxes, start=1):
        lines.append(f"step {n} {fx.q + 1}")
        for p, C in fx.coeffs.items():
            grp = fx.problem.pdata.groups[p]
            for r, (e, i) in enumerate(zip(grp.elements, grp.local_vertex)):
                lines.append(f"pair {int(e)} {int(i)} {p} {C.shape[1]}")
                lines += [" ".join(repr(float(x)) for x in row) for row in C[r]]
    Path(path).write_text("\n".join(lines) + "\n")


def load_flux(path) -> list[dict]:
    """Read a flux dump into per-step dictionaries keyed by (element, vertex)."""
    rows = Path(path).read_text().splitlines()
    if rows[0] != FLUX_HEADER:
        raise ValueError("not an eqflux flux file")
    steps: list[dict] = []
    k = 1
    while k < len(rows):
        parts = rows[k].split()
        if parts[0] == "step":
            steps.append({})
            k += 1
        elif parts[0] == "pair":
            e, i, p, dim = map(int, parts[1:])
            block = np.array([[float(x) for x in rows[k + 1 + r].split()] for r in range(dim)])
            steps[-1][(e, i)] = (p, block)
            k += 1 + dim
        else:
            raise ValueError(f"unexpected record {parts[0]!r}")
    return steps

