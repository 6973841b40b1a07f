"""A posteriori estimators, the coarsening indicator and discrete dual norms.

Dual (H^{-1}-type) norms are evaluated with discrete Riesz lifts in a
reference space: the coarsest common refinement of all meshes of a run,
bisected uniformly ``refinements`` more times, with polynomial degree
``max p + degree_increase``. The reference space contains every V^n, so
discrete solutions are evaluated there exactly through parent maps.

Local dual norms on a vertex patch use the reference basis functions whose
support lies inside the patch (zero trace on its boundary).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import MeshLevel, parent_map, refine_uniform, union_cut
from .reconstruction import (IntervalData, PatchData, evaluate_modes, jump_energy_coefficient,
                             radau_modes, time_derivative_modes)
from .solver import DiscreteSolution, StepGeometry, time_moments
from .spaces import HpSpace, MeshQuadrature, assemble_stiffness

POINCARE_UNIT_SQUARE = math.sqrt(2.0) / math.pi


@dataclass(frozen=True)
class RieszConfig:
    """Enrichment of the reference space used for dual norms."""

    refinements: int = 1
    degree_increase: int = 1
    quad_extra: int = 4

    def enriched(self) -> "RieszConfig":
        return RieszConfig(self.refinements + 1, self.degree_increase, self.quad_extra)


class ReferenceSpace:
    """Dirichlet H^1 space that contains all discrete spaces of a run."""

    def __init__(self, spaces: list, config: RieszConfig = RieszConfig()):
        self.config = config
        meshes: list[MeshLevel] = []
        for s in spaces:
            if not any(s.mesh is m for m in meshes):
                meshes.append(s.mesh)
        base = union_cut(*meshes) if len(meshes) > 1 else meshes[0]
        self.mesh = refine_uniform(base, config.refinements) if config.refinements > 0 else base
        self.degree = int(max(int(s.degrees.max()) for s in spaces)) + config.degree_increase
        self.space = HpSpace(self.mesh, self.degree)
        self.quad = MeshQuadrature(self.mesh, 2 * self.degree + config.quad_extra)
        self.points = self.quad.flat_points
        self.weights = self.quad.flat_weights
        self.nq = self.quad.nq
        self.V, self.Gx, self.Gy = self.space.evaluate_on(self.quad)
        self.VT = (self.V.T @ sp.diags(self.weights)).tocsr()
        self.GxT = (self.Gx.T @ sp.diags(self.weights)).tocsr()
        self.GyT = (self.Gy.T @ sp.diags(self.weights)).tocsr()
        self.A = assemble_stiffness(self.space, self.quad)
        self.lu = splu(self.A.tocsc())
        self._parents: dict[int, np.ndarray] = {}
        self._evals: dict[int, tuple] = {}
        self._local: dict[int, "PatchLifts"] = {}

    @property
    def ndof(self) -> int:
        return self.space.ndof

    def parent(self, mesh: MeshLevel) -> np.ndarray:
        key = id(mesh)
        if key not in self._parents:
            self._parents[key] = parent_map(self.mesh, mesh)
        return self._parents[key]

    def eval_matrices(self, space: HpSpace):
        """(V, Gx, Gy) of ``space`` at the reference quadrature points."""
        key = id(space)
        if key not in self._evals:
            self._evals[key] = (space, space.evaluate_on(self.quad, self.parent(space.mesh)))
        return self._evals[key][1]

    def load(self, values=None, grads=None) -> np.ndarray:
        """Load vectors (ndof, k) of (values, v) + (grads, grad v); inputs are (k, npts[, 2])."""
        out = None
        if values is not None:
            out = self.VT @ np.atleast_2d(values).T
        if grads is not None:
            g = np.asarray(grads).reshape(-1, len(self.weights), 2)
            term = self.GxT @ g[..., 0].T + self.GyT @ g[..., 1].T
            out = term if out is None else out + term
        return out

    def norm_sq(self, loads: np.ndarray) -> np.ndarray:
        """Squared dual norms b^T A^{-1} b of the columns of ``loads``."""
        if self.ndof == 0:
            return np.zeros(loads.shape[1])
        return np.einsum("ik,ik->k", loads, self.lu.solve(loads))

    def element_integrals(self, values: np.ndarray) -> np.ndarray:
        """Per reference element integrals of point values (..., npts)."""
        v = np.asarray(values) * self.weights
        return v.reshape(v.shape[:-1] + (-1, self.nq)).sum(axis=-1)

    def local_lifts(self, mesh: MeshLevel) -> "PatchLifts":
        key = id(mesh)
        if key not in self._local:
            self._local[key] = PatchLifts(self, mesh)
        return self._local[key]


class PatchLifts:
    """Local Riesz lifts in H^1_0(omega_a) for the vertex patches of ``mesh``."""

    def __init__(self, ref: ReferenceSpace, mesh: MeshLevel):
        self.ref = ref
        self.mesh = mesh
        self.parent = ref.parent(mesh)
        sp_ = ref.space
        nel = ref.mesh.n_elements
        L = sp_.l2g
        r, c = np.nonzero(L >= 0)
        self.incidence = sp.csr_matrix((np.ones(len(r)), (L[r, c], r)), shape=(sp_.ndof, nel))
        tri = mesh.triangles[self.parent]  # (nel_ref, 3) coarse vertices of each ref element
        self.local_vertex_of = tri
        self._cache: dict[int, tuple] = {}

    def elements(self, a: int) -> np.ndarray:
        return np.flatnonzero(np.any(self.local_vertex_of == a, axis=1))

    def patch(self, a: int):
        if a in self._cache:
            return self._cache[a]
        ref = self.ref
        elems = self.elements(a)
        inside = np.zeros(ref.mesh.n_elements)
        inside[elems] = 1.0
        touch = self.incidence @ inside
        total = np.asarray(self.incidence.sum(axis=1)).ravel()
        dofs = np.flatnonzero((touch > 0) & (touch == total))
        rows = (elems[:, None] * ref.nq + np.arange(ref.nq)).ravel()
        W = sp.diags(ref.weights[rows])
        V = ref.V[rows][:, dofs]
        Gx = ref.Gx[rows][:, dofs]
        Gy = ref.Gy[rows][:, dofs]
        VT = (V.T @ W).tocsr()
        GxT = (Gx.T @ W).tocsr()
        GyT = (Gy.T @ W).tocsr()
        Aloc = ref.A[dofs][:, dofs].toarray()
        cho = sla.cho_factor(Aloc) if len(dofs) else None
        entry = (elems, rows, dofs, VT, GxT, GyT, cho)
        self._cache[a] = entry
        return entry

    def norm_sq(self, a: int, values=None, grads=None) -> np.ndarray:
        """Squared H^{-1}(omega_a) norms; inputs restricted to the patch points, (k, nrows[, 2])."""
        elems, rows, dofs, VT, GxT, GyT, cho = self.patch(a)
        k = (np.atleast_2d(values) if values is not None else np.asarray(grads)).shape[0]
        if cho is None:
            return np.zeros(k)
        b = np.zeros((len(dofs), k))
        if values is not None:
            b += VT @ np.atleast_2d(values).T
        if grads is not None:
            g = np.asarray(grads)
            b += GxT @ g[..., 0].T + GyT @ g[..., 1].T
        return np.einsum("ik,ik->k", b, sla.cho_solve(cho, b))


class IntervalOnReference:
    """Solution, jump and reconstruction of one step at the reference points."""

    def __init__(self, ref: ReferenceSpace, sol: DiscreteSolution, n: int):
        self.ref = ref
        self.n = n
        self.basis = sol.partition.basis(n)
        self.q = self.basis.degree
        self.tau = self.basis.tau
        V, Gx, Gy = ref.eval_matrices(sol.spaces[n])
        Vp, Gxp, Gyp = ref.eval_matrices(sol.spaces[n - 1])
        U = sol.coeffs[n - 1]
        self.u_vals = np.asarray((V @ U.T).T)
        self.u_grads = np.stack([(Gx @ U.T).T, (Gy @ U.T).T], axis=-1)
        pe, st = sol.end_value(n - 1), sol.start_value(n)
        self.jump_vals = Vp @ pe - V @ st
        self.jump_grads = np.stack([Gxp @ pe - Gx @ st, Gyp @ pe - Gy @ st], axis=-1)
        self.Iu_vals = radau_modes(self.basis, self.u_vals, self.jump_vals)
        self.Iu_grads = radau_modes(self.basis, self.u_grads, self.jump_grads)
        self.dtIu = time_derivative_modes(self.basis, self.Iu_vals)
        self._f_moments = None

    def f_moments(self, f, extra: int = 6) -> np.ndarray:
        if self._f_moments is None:
            self._f_moments = time_moments(f, self.ref.points, self.basis, extra)
        return self._f_moments

    def times(self, npts: int | None = None):
        return self.basis.gauss(npts or self.q + 3)

    def residual_loads(self, f, t) -> np.ndarray:
        """Loads of v -> (f, v) - (dt I u, v) - (grad I u, grad v) at times ``t``: (ndof, nt)."""
        fv = np.stack([f(self.ref.points, float(s)) for s in np.atleast_1d(t)])
        vals = fv - evaluate_modes(self.basis, self.dtIu, t)
        grads = -evaluate_modes(self.basis, self.Iu_grads, t)
        return self.ref.load(vals, grads)

    def oscillation_values(self, f, t) -> np.ndarray:
        """f(t) - f_tau(t) at the reference points: (nt, npts)."""
        fv = np.stack([f(self.ref.points, float(s)) for s in np.atleast_1d(t)])
        return fv - evaluate_modes(self.basis, self.f_moments(f), t)


# ---------------------------------------------------------------------------
# element indicators on the common refinement
# ---------------------------------------------------------------------------

def _to_coarse(geom: StepGeometry, per_fine: np.ndarray) -> np.ndarray:
    """Sum per-fine-element values (..., nel_fine) into current-mesh elements."""
    nel_c = geom.space_cur.mesh.n_elements
    flat = np.atleast_2d(per_fine)
    out = np.stack([np.bincount(geom.map_cur, weights=row, minlength=nel_c) for row in flat])
    return out.reshape(np.shape(per_fine)[:-1] + (nel_c,))


def _fine_integrals(geom: StepGeometry, values: np.ndarray) -> np.ndarray:
    v = values * geom.weights
    return v.reshape(v.shape[:-1] + (-1, geom.nq)).sum(axis=-1)


def _flux_misfit_modes(flux, idata: IntervalData) -> np.ndarray:
    sig = np.zeros_like(idata.Iu_grads)
    sig[:flux.values.shape[0]] = flux.values
    return sig + idata.Iu_grads


def eta_F(flux, idata: IntervalData, times=None):
    """int_{I_n} ||sigma + grad I u||_K^2 dt per current-mesh element.

    With ``times``, also returns ||sigma + grad I u||_K at those times, (nt, nK).
    """
    geom = idata.geom
    d = _flux_misfit_modes(flux, idata)
    integ = _to_coarse(geom, _fine_integrals(geom, np.sum(d ** 2, axis=-1)).sum(axis=0))
    if times is None:
        return integ
    vals = evaluate_modes(idata.basis, d, times)
    return integ, np.sqrt(_to_coarse(geom, _fine_integrals(geom, np.sum(vals ** 2, axis=-1))))


def eta_J(idata: IntervalData) -> np.ndarray:
    """Jump-coefficient times ||grad jump||_K^2 per current-mesh element."""
    geom = idata.geom
    coef = jump_energy_coefficient(idata.tau, idata.q)
    return coef * _to_coarse(geom, _fine_integrals(geom, np.sum(idata.jump_grads ** 2, axis=-1)))


def eta_osc_h(idata: IntervalData, pdata: PatchData, times=None):
    """int_{I_n} sum_{K~ in K} (h_K~/pi)^2 ||f_tau - f_htau||_K~^2 dt per current-mesh element."""
    geom = idata.geom
    h2 = (geom.fine.diameters / math.pi) ** 2
    d = idata.F - pdata.f_htau
    integ = _to_coarse(geom, h2 * _fine_integrals(geom, d ** 2).sum(axis=0))
    if times is None:
        return integ
    vals = evaluate_modes(idata.basis, d, times)
    return integ, np.sqrt(_to_coarse(geom, h2 * _fine_integrals(geom, vals ** 2)))


def eta_osc_h_envelope(idata: IntervalData, pdata: PatchData) -> float:
    """(max h/pi)^2 int ||f_tau - f_htau||^2 dt, an upper envelope of sum_K eta_osc_h."""
    geom = idata.geom
    d = idata.F - pdata.f_htau
    return float((geom.fine.diameters.max() / math.pi) ** 2 * np.sum(d ** 2 * geom.weights))


@dataclass
class CoarseningIndicator:
    eta_C2: float
    theta: float
    jump_energy: float
    orthogonality_residual: float


def eta_C(sol: DiscreteSolution, n: int, geom: StepGeometry) -> CoarseningIndicator:
    """Elliptic projection of u(t_{n-1}) onto V^n and the weighted energy misfit.

    theta = ||grad(w - P w)||^2 / ||grad jump||^2 with w = u(t_{n-1}); the
    orthogonality residual compares ||grad(w - P w)||^2 with
    ||grad w||^2 - ||grad P w||^2.
    """
    basis = sol.partition.basis(n)
    coef = jump_energy_coefficient(basis.tau, basis.degree)
    w = sol.end_value(n - 1)
    _, gpx, gpy = geom.E_prev
    _, gcx, gcy = geom.E_cur
    W = geom.weights
    wx, wy = gpx @ w, gpy @ w
    if geom.space_cur.ndof:
        b = gcx.T @ (W * wx) + gcy.T @ (W * wy)
        P = geom.stiffness_solver().solve(b)
    else:
        P = np.zeros(0)
    px, py = gcx @ P, gcy @ P
    misfit = float(np.sum(W * ((wx - px) ** 2 + (wy - py) ** 2)))
    norm_w = float(np.sum(W * (wx ** 2 + wy ** 2)))
    norm_p = float(np.sum(W * (px ** 2 + py ** 2)))
    scale = max(norm_w, 1e-300)
    orth = abs(misfit - (norm_w - norm_p)) / scale
    st = sol.start_value(n)
    jx, jy = wx - gcx @ st, wy - gcy @ st
    jn = float(np.sum(W * (jx ** 2 + jy ** 2)))
    theta = misfit / jn if jn > 1e-300 else 0.0
    return CoarseningIndicator(coef * misfit, theta, jn, orth)


# ---------------------------------------------------------------------------
# dual norms
# ---------------------------------------------------------------------------

def dual_residual_norm(iref: IntervalOnReference, f, npts: int | None = None):
    """int_{I_n} ||R(t)||^2_{H^{-1}} dt by Gauss quadrature; returns (value, t, pointwise)."""
    t, w = iref.times(npts)
    vals = iref.ref.norm_sq(iref.residual_loads(f, t))
    return float(w @ vals), t, vals


def eta_osc_tau(iref: IntervalOnReference, f, mode: str = "riesz", npts: int | None = None):
    """[eta_osc_tau^n]^2 and the pointwise values eta_osc_tau(t) at Gauss times."""
    t, w = iref.times(npts)
    d = iref.oscillation_values(f, t)
    if mode == "riesz":
        sq = iref.ref.norm_sq(iref.ref.load(d))
    elif mode == "poincare":
        sq = POINCARE_UNIT_SQUARE ** 2 * (d ** 2 @ iref.ref.weights)
    else:
        raise ValueError(f"unknown oscillation mode {mode!r}")
    sq = np.maximum(sq, 0.0)
    return float(w @ sq), t, np.sqrt(sq)


def eta_osc_init(ref: ReferenceSpace, sol: DiscreteSolution, u0) -> float:
    """||u0 - Pi_h u0||^2 at the reference quadrature."""
    V, _, _ = ref.eval_matrices(sol.spaces[0])
    d = u0(ref.points) - V @ sol.initial
    return float(ref.weights @ d ** 2)


def patch_reference_data(iref: IntervalOnReference, geom: StepGeometry, pdata: PatchData, lifts: PatchLifts, a: int):
    """Fine elements and local vertex indices of the reference elements of patch a."""
    elems = lifts.patch(a)[0]
    ref = iref.ref
    fine_of = ref.parent(geom.fine)[elems]
    coarse_tri = geom.space_cur.mesh.triangles[geom.map_cur[fine_of]]
    local_vertex = np.argmax(coarse_tri == a, axis=1)
    return elems, fine_of, local_vertex


def eta_osc_patch(iref: IntervalOnReference, geom: StepGeometry, pdata: PatchData, f,
                  npts: int | None = None) -> np.ndarray:
    """int_{I_n} ||f - Pi^{a,n} f||^2_{H^{-1}(omega_a)} dt for every vertex a of the current mesh."""
    ref = iref.ref
    mesh = geom.space_cur.mesh
    lifts = ref.local_lifts(mesh)
    t, w = iref.times(npts)
    fv = np.stack([f(ref.points, float(s)) for s in t])  # (nt, npts)
    out = np.zeros(mesh.n_vertices)
    pts = ref.quad.points
    for a in range(mesh.n_vertices):
        elems, fine_of, lv = patch_reference_data(iref, geom, pdata, lifts, a)
        rows = lifts.patch(a)[1]
        pi = pdata.evaluate(fine_of, lv, pts[elems])  # (m, nq, q+1)
        piv = evaluate_modes(iref.basis, pi.reshape(-1, iref.q + 1).T, t)  # (nt, rows)
        out[a] = float(w @ lifts.norm_sq(a, fv[:, rows] - piv))
    return out


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class StepEstimates:
    """Indicators of one step; per-element arrays are indexed by current-mesh elements."""

    n: int
    tau: float
    q: int
    eta_F2: np.ndarray
    eta_J2: np.ndarray
    eta_osc_h2: np.ndarray
    eta_osc_tau2: float
    eta_C2: float
    theta: float
    jump_energy: float
    orthogonality_residual: float
    times: np.ndarray
    time_weights: np.ndarray
    eta_F_t: np.ndarray        # (nt, nK)
    eta_osc_h_t: np.ndarray    # (nt, nK)
    eta_osc_tau_t: np.ndarray  # (nt,)
    eta_osc_patch2: np.ndarray | None = None

    def y_integrand(self) -> np.ndarray:
        spatial = np.sqrt(np.sum((self.eta_F_t + self.eta_osc_h_t) ** 2, axis=1))
        return (spatial + self.eta_osc_tau_t) ** 2


@dataclass
class EstimatorReport:
    steps: list
    eta_osc_init2: float
    eta_Y2: float = 0.0
    eta_EY2: float = 0.0
    quadrature_points: int = 0
    quadrature_change: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def eta_J2_total(self) -> float:
        return float(sum(s.eta_J2.sum() for s in self.steps))

    @property
    def eta_Y(self) -> float:
        return math.sqrt(self.eta_Y2)

    @property
    def eta_EY(self) -> float:
        return math.sqrt(self.eta_EY2)

    def recomposition_residual(self) -> float:
        return abs(self.eta_EY2 - self.eta_Y2 - self.eta_J2_total) / max(self.eta_EY2, 1e-300)

    def is_nonnegative(self) -> bool:
        vals = [self.eta_osc_init2, self.eta_Y2, self.eta_EY2]
        for s in self.steps:
            vals += [s.eta_osc_tau2, s.eta_C2, s.eta_F2.min(initial=0), s.eta_J2.min(initial=0),
                     s.eta_osc_h2.min(initial=0)]
            if s.eta_osc_patch2 is not None:
                vals.append(s.eta_osc_patch2.min(initial=0))
        return all(v >= 0 for v in vals)

    def write_csv(self, path) -> None:
        """Rows: kind=element (n, K), kind=step (n), kind=global."""
        cols = ["kind", "n", "K", "eta_F2", "eta_J2", "eta_osc_h2", "eta_osc_tau2", "eta_C2",
                "eta_osc_patch2", "theta", "eta_Y2", "eta_EY2", "eta_osc_init2"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            for k, v in sorted(self.meta.items()):
                fh.write(f"# {k}: {v}\n")
            wr.writerow(cols)
            for s in self.steps:
                for K in range(len(s.eta_F2)):
                    wr.writerow(["element", s.n, K, _fmt(s.eta_F2[K]), _fmt(s.eta_J2[K]),
                                 _fmt(s.eta_osc_h2[K]), "", "", "", "", "", "", ""])
            for s in self.steps:
                patch = "" if s.eta_osc_patch2 is None else _fmt(s.eta_osc_patch2.sum())
                wr.writerow(["step", s.n, "", _fmt(s.eta_F2.sum()), _fmt(s.eta_J2.sum()),
                             _fmt(s.eta_osc_h2.sum()), _fmt(s.eta_osc_tau2), _fmt(s.eta_C2), patch,
                             _fmt(s.theta), "", "", ""])
            wr.writerow(["global", "", "", _fmt(sum(s.eta_F2.sum() for s in self.steps)),
                         _fmt(self.eta_J2_total), _fmt(sum(s.eta_osc_h2.sum() for s in self.steps)),
                         _fmt(sum(s.eta_osc_tau2 for s in self.steps)),
                         _fmt(sum(s.eta_C2 for s in self.steps)), "", "",
                         _fmt(self.eta_Y2), _fmt(self.eta_EY2), _fmt(self.eta_osc_init2)])


def _fmt(x) -> str:
    return repr(float(x))


class StepEstimator:
    """Evaluates the indicators of one step, including at arbitrary Gauss sets."""

    def __init__(self, idata: IntervalData, pdata: PatchData, flux, iref: IntervalOnReference,
                 sol: DiscreteSolution, f, osc_mode: str = "riesz"):
        self.idata, self.pdata, self.flux, self.iref = idata, pdata, flux, iref
        self.sol, self.f, self.osc_mode = sol, f, osc_mode

    def integrand(self, npts: int):
        t, w = self.idata.basis.gauss(npts)
        _, eF = eta_F(self.flux, self.idata, t)
        _, eO = eta_osc_h(self.idata, self.pdata, t)
        _, _, eT = eta_osc_tau(self.iref, self.f, self.osc_mode, npts)
        spatial = np.sqrt(np.sum((eF + eO) ** 2, axis=1))
        return float(w @ (spatial + eT) ** 2)

    def estimates(self, npts: int | None = None, local: bool = False) -> StepEstimates:
        idata = self.idata
        npts = npts or idata.q + 3
        t, w = idata.basis.gauss(npts)
        F2, eF = eta_F(self.flux, idata, t)
        O2, eO = eta_osc_h(idata, self.pdata, t)
        T2, _, eT = eta_osc_tau(self.iref, self.f, self.osc_mode, npts)
        C = eta_C(self.sol, idata.n, idata.geom)
        patch = eta_osc_patch(self.iref, idata.geom, self.pdata, self.f, npts) if local else None
        return StepEstimates(idata.n, idata.tau, idata.q, F2, eta_J(idata), O2, T2, C.eta_C2, C.theta,
                             C.jump_energy, C.orthogonality_residual, t, w, eF, eO, eT, patch)


def global_eta(steps: list, eta_osc_init2: float, estimators: list | None = None,
               tolerance: float = 1e-3, max_extra: int = 6) -> EstimatorReport:
    """Compose eta_Y^2 and eta_EY^2 from per-step time-resolved indicators.

    The time integral of the square-root integrand is evaluated with the
    stored Gauss rule (q+3 points by default). If ``estimators`` are given,
    the rule is enlarged one point at a time until the composed value changes
    by less than ``tolerance`` (relative).
    """
    def compose(values):
        return float(sum(values)) + eta_osc_init2

    parts = [float(s.time_weights @ s.y_integrand()) for s in steps]
    eta_Y2 = compose(parts)
    change = 0.0
    extra = 0
    if estimators is not None:
        for extra in range(1, max_extra + 1):
            new = [e.integrand(len(s.times) + extra) for e, s in zip(estimators, steps)]
            newY2 = compose(new)
            change = abs(newY2 - eta_Y2) / max(newY2, 1e-300)
            eta_Y2 = newY2
            if change < tolerance:
                break
    rep = EstimatorReport(steps, eta_osc_init2)
    rep.eta_Y2 = eta_Y2
    rep.eta_EY2 = eta_Y2 + rep.eta_J2_total
    rep.quadrature_points = extra
    rep.quadrature_change = change
    return rep


# ---------------------------------------------------------------------------
# localized error seminorms
# ---------------------------------------------------------------------------

@dataclass
class LocalSeminorm:
    """Pieces of |u - u_htau|^2 on the space-time patch omega_a x I_n."""

    dual: float
    gradient: float
    jump: float

    @property
    def total(self) -> float:
        return self.dual + self.gradient + self.jump


def local_EY_seminorms(iref: IntervalOnReference, geom: StepGeometry, idata: IntervalData,
                       dt_u, grad_u, npts: int | None = None) -> list[LocalSeminorm]:
    """Localized error seminorms for every vertex patch of the current mesh.

    ``dt_u(x, t)`` and ``grad_u(x, t)`` are the exact time derivative and
    gradient. The gradient and jump parts are integrated per element and
    summed over the patch; the dual part uses local Riesz lifts.
    """
    ref = iref.ref
    mesh = geom.space_cur.mesh
    lifts = ref.local_lifts(mesh)
    t, w = iref.times(npts or iref.q + 6)
    dtu = np.stack([dt_u(ref.points, float(s)) for s in t])
    gu = np.stack([grad_u(ref.points, float(s)) for s in t])
    dt_err = dtu - evaluate_modes(iref.basis, iref.dtIu, t)
    g_err = gu - evaluate_modes(iref.basis, iref.Iu_grads, t)
    per_ref = ref.element_integrals(np.sum(g_err ** 2, axis=-1))  # (nt, nel_ref)
    grad_K = np.bincount(lifts.parent, weights=w @ per_ref, minlength=mesh.n_elements)
    jump_K = eta_J(idata)
    out = []
    for a in range(mesh.n_vertices):
        rows = lifts.patch(a)[1]
        dual = float(w @ lifts.norm_sq(a, dt_err[:, rows]))
        ks = np.flatnonzero(np.any(mesh.triangles == a, axis=1))
        out.append(LocalSeminorm(dual, float(grad_K[ks].sum()), float(jump_K[ks].sum())))
    return out
