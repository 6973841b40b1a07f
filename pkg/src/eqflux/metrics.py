"""Manufactured problems, true errors and numerical checks of the error identities.

All negative-norm quantities use the discrete Riesz lifts of
:mod:`eqflux.estimators`; since a discrete lift only sees a subspace, every
inequality is checked with a relative band (default 2%) whose adequacy is
measured by the enrichment audit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import (EstimatorReport, IntervalOnReference, ReferenceSpace,
                         dual_residual_norm, eta_osc_tau)
from .reconstruction import evaluate_modes, jump_energy_coefficient
from .solver import DiscreteSolution

PI = math.pi


@dataclass
class ManufacturedProblem:
    """Exact solution on (0,1)^2 x (0,T) with homogeneous Dirichlet data.

    Fields take points ``x`` of shape (n, 2) and a scalar time; ``grad_u``
    returns (n, 2).
    """

    name: str
    u: callable
    dt_u: callable
    grad_u: callable
    laplace_u: callable
    T: float = 1.0

    def f(self, x, t):
        return self.dt_u(x, t) - self.laplace_u(x, t)

    def u0(self, x):
        return self.u(x, 0.0)

    def boundary_residual(self, npts: int = 41, t: float = 0.5) -> float:
        s = np.linspace(0.0, 1.0, npts)
        z = np.zeros_like(s)
        o = np.ones_like(s)
        pts = np.concatenate([np.column_stack(c) for c in ((s, z), (s, o), (z, s), (o, s))])
        return float(np.abs(self.u(pts, t)).max())


def _ms1(T=1.0):
    def u(x, t):
        return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]) * math.exp(-t)

    def grad(x, t):
        e = math.exp(-t)
        return np.column_stack([PI * np.cos(PI * x[:, 0]) * np.sin(PI * x[:, 1]) * e,
                                PI * np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1]) * e])

    return ManufacturedProblem("MS1", u, lambda x, t: -u(x, t), grad, lambda x, t: -2 * PI ** 2 * u(x, t), T)


def _ms2(T=1.0):
    def s(x):
        return x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1])

    def u(x, t):
        return s(x) * (1.0 + t)

    def grad(x, t):
        X, Y = x[:, 0], x[:, 1]
        return (1.0 + t) * np.column_stack([(1 - 2 * X) * Y * (1 - Y), X * (1 - X) * (1 - 2 * Y)])

    def lap(x, t):
        X, Y = x[:, 0], x[:, 1]
        return -2.0 * (1.0 + t) * (X * (1 - X) + Y * (1 - Y))

    return ManufacturedProblem("MS2", u, lambda x, t: s(x), grad, lap, T)


MS3_AMPLITUDE = 0.1
MS3_FREQUENCY = 4


def _ms3(T=1.0):
    """MS1 plus a decaying checkerboard mode sin(4 pi x) sin(4 pi y) exp(-32 pi^2 t).

    The added mode solves the homogeneous heat equation, so f is that of
    MS1 while u0 carries a sign pattern that is under-resolved on coarse meshes.
    """
    base = _ms1(T)
    k = MS3_FREQUENCY * PI
    lam = 2 * k ** 2
    d = MS3_AMPLITUDE

    def mode(x, t):
        return d * np.sin(k * x[:, 0]) * np.sin(k * x[:, 1]) * math.exp(-lam * t)

    def u(x, t):
        return base.u(x, t) + mode(x, t)

    def dt(x, t):
        return base.dt_u(x, t) - lam * mode(x, t)

    def grad(x, t):
        e = d * math.exp(-lam * t)
        g = np.column_stack([k * np.cos(k * x[:, 0]) * np.sin(k * x[:, 1]) * e,
                             k * np.sin(k * x[:, 0]) * np.cos(k * x[:, 1]) * e])
        return base.grad_u(x, t) + g

    def lap(x, t):
        return base.laplace_u(x, t) - lam * mode(x, t)

    return ManufacturedProblem("MS3", u, dt, grad, lap, T)


def manufactured(name: str, T: float = 1.0) -> ManufacturedProblem:
    table = {"MS1": _ms1, "MS2": _ms2, "MS3": _ms3}
    try:
        return table[name.upper()](T)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(table)}") from None


# ---------------------------------------------------------------------------
# true errors
# ---------------------------------------------------------------------------

@dataclass
class StepErrors:
    n: int
    dual_dt2: float    # int ||dt(u - I u)||^2_{H^{-1}}
    grad2: float       # int ||grad(u - I u)||^2
    gap2: float        # int ||grad(u_htau - I u_htau)||^2
    residual2: float   # ||R(I u)|_{I_n}||^2
    jump_grad2: float  # ||grad jump||^2


@dataclass
class ErrorReport:
    steps: list
    final2: float
    init2: float
    local: list = field(default_factory=list)  # per step: list[LocalSeminorm]

    @property
    def Y2(self) -> float:
        return sum(s.dual_dt2 + s.grad2 for s in self.steps) + self.final2

    @property
    def X_gap2(self) -> float:
        return sum(s.gap2 for s in self.steps)

    @property
    def EY2(self) -> float:
        return self.Y2 + self.X_gap2

    @property
    def residual2(self) -> float:
        return sum(s.residual2 for s in self.steps)

    @property
    def Y(self) -> float:
        return math.sqrt(max(self.Y2, 0.0))

    @property
    def EY(self) -> float:
        return math.sqrt(max(self.EY2, 0.0))


def step_errors(problem: ManufacturedProblem, iref: IntervalOnReference, npts: int | None = None) -> StepErrors:
    ref = iref.ref
    t, w = iref.times(npts or iref.q + 6)
    dtu = np.stack([problem.dt_u(ref.points, float(s)) for s in t])
    gu = np.stack([problem.grad_u(ref.points, float(s)) for s in t])
    dd = dtu - evaluate_modes(iref.basis, iref.dtIu, t)
    dual = float(w @ ref.norm_sq(ref.load(dd)))
    ge = gu - evaluate_modes(iref.basis, iref.Iu_grads, t)
    grad2 = float(w @ (np.sum(ge ** 2, axis=-1) @ ref.weights))
    jg = float(np.sum(iref.jump_grads ** 2, axis=-1) @ ref.weights)
    gap2 = jump_energy_coefficient(iref.tau, iref.q) * jg
    res2, _, _ = dual_residual_norm(iref, problem.f, npts or iref.q + 3)
    return StepErrors(iref.n, dual, grad2, gap2, res2, jg)


def true_errors(problem: ManufacturedProblem, sol: DiscreteSolution, ref: ReferenceSpace,
                intervals: list | None = None, npts: int | None = None) -> ErrorReport:
    """Y, EY and X-gap errors of the reconstruction; ``intervals`` may hold prebuilt IntervalOnReference."""
    N = sol.partition.N
    intervals = intervals or [IntervalOnReference(ref, sol, n) for n in range(1, N + 1)]
    steps = [step_errors(problem, iv, npts) for iv in intervals]
    last = intervals[-1]
    T = sol.partition.T
    IuT = evaluate_modes(last.basis, last.Iu_vals, [T])[0]
    final2 = float(ref.weights @ (problem.u(ref.points, T) - IuT) ** 2)
    V0, _, _ = ref.eval_matrices(sol.spaces[0])
    init2 = float(ref.weights @ (problem.u0(ref.points) - V0 @ sol.initial) ** 2)
    return ErrorReport(steps, final2, init2)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

@dataclass
class Check:
    """One verified inequality left <= right, or an identity with gap <= tolerance."""

    name: str
    n: int | str
    left: float
    right: float
    tolerance: float
    kind: str = "inequality"  # or "identity"

    @property
    def slack(self) -> float:
        return self.right - self.left

    @property
    def passed(self) -> bool:
        if self.kind == "identity":
            return bool(abs(self.left - self.right) <= self.tolerance * max(abs(self.right), abs(self.left), 1e-300)
                        or abs(self.left - self.right) <= 1e-14)
        return bool(self.slack >= -self.tolerance * max(abs(self.right), 1e-300) or self.slack >= -1e-14)


def verify_infsup_identity(errors: ErrorReport, tolerance: float = 0.05) -> Check:
    """||u - I u||_Y^2 against ||R(I u)||^2 + ||u0 - u_htau(0)||^2."""
    return Check("infsup_identity", "all", errors.Y2, errors.residual2 + errors.init2, tolerance, "identity")


def verify_jump_bound(est: EstimatorReport, errors: ErrorReport, band: float = 0.02) -> list[Check]:
    """Per-interval jump bounds: the main bound and both projection/oscillation variants."""
    out = []
    for s, e in zip(est.steps, errors.steps):
        q, tau = s.q, s.tau
        coef = jump_energy_coefficient(tau, q)
        J = s.jump_energy
        R = e.residual2
        out.append(Check("jump_bound_main", s.n, coef * J, 8 * R + min(s.eta_C2, 8 * s.eta_osc_tau2), band))
        a = tau / (8 * q + 4)
        proj = s.eta_C2 / coef
        out.append(Check("jump_bound_projection", s.n, a * J, R + a * proj, band))
        b = tau / (8 * q + 12)
        out.append(Check("jump_bound_oscillation", s.n, b * J, 2 * (R + s.eta_osc_tau2), band))
    return out


def measured_theta(est: EstimatorReport) -> float:
    return max((s.theta for s in est.steps), default=0.0)


def verify_norm_equivalence(est: EstimatorReport, errors: ErrorReport, band: float = 0.02) -> list[Check]:
    """Lower and upper equivalence between the EY and Y errors, plus the theta variant."""
    Y2, EY2 = errors.Y2, errors.EY2
    extra = sum(min(s.eta_C2, 8 * s.eta_osc_tau2) for s in est.steps)
    out = [Check("equivalence_lower", "all", Y2, EY2, 0.0),
           Check("equivalence_upper", "all", EY2, 9 * Y2 + extra, band)]
    theta = measured_theta(est)
    if theta < 1.0:
        out.append(Check("equivalence_theta", "all", EY2, (3 - theta) / (1 - theta) * Y2, band))
    return out


def verify_upper_bounds(est: EstimatorReport, errors: ErrorReport, band: float = 0.02) -> list[Check]:
    return [Check("upper_bound_EY", "all", errors.EY, est.eta_EY, band),
            Check("upper_bound_Y", "all", errors.Y, est.eta_Y, band)]


def effectivity(est: EstimatorReport, errors: ErrorReport) -> tuple[float, float]:
    """(eta_EY / ||u - u_htau||_EY, eta_Y / ||u - I u||_Y)."""
    return est.eta_EY / max(errors.EY, 1e-300), est.eta_Y / max(errors.Y, 1e-300)


def local_efficiency_ratios(est: EstimatorReport, local: list, meshes: list) -> list[np.ndarray]:
    """Per step and element: (int eta_F^2 + eta_J^2) over the patch sums of local errors and oscillation.

    ``local[n-1]`` is the list of LocalSeminorm per vertex, ``meshes[n-1]``
    the current mesh of step n.
    """
    out = []
    for s, loc, mesh in zip(est.steps, local, meshes):
        per_vertex = np.array([ls.total for ls in loc])
        if s.eta_osc_patch2 is not None:
            per_vertex = per_vertex + s.eta_osc_patch2
        rhs = per_vertex[mesh.triangles].sum(axis=1)
        lhs = s.eta_F2 + s.eta_J2
        out.append(lhs / np.maximum(rhs, 1e-300))
    return out


# ---------------------------------------------------------------------------
# Riesz enrichment audit
# ---------------------------------------------------------------------------

@dataclass
class RieszAudit:
    """Relative change of every dual norm when the reference space is enriched."""

    names: list
    base: np.ndarray
    enriched: np.ndarray
    tolerance: float = 0.02
    floor: float = 1e-14

    @property
    def changes(self) -> np.ndarray:
        d = np.abs(self.enriched - self.base)
        scale = np.maximum(np.maximum(np.abs(self.base), np.abs(self.enriched)), 1e-300)
        rel = d / scale
        rel[d <= self.floor * max(1.0, float(np.abs(self.enriched).max(initial=0.0)))] = 0.0
        return rel

    @property
    def max_change(self) -> float:
        return float(self.changes.max(initial=0.0))

    @property
    def passed(self) -> bool:
        return self.max_change <= self.tolerance

    def summary(self) -> str:
        if not self.names:
            return "riesz audit: no dual norms"
        k = int(np.argmax(self.changes))
        return (f"riesz audit: {len(self.names)} dual norms, max relative change "
                f"{self.max_change:.3e} ({self.names[k]}), tolerance {self.tolerance:g} -> "
                f"{'PASS' if self.passed else 'FAIL'}")


def dual_norm_table(problem: ManufacturedProblem, sol: DiscreteSolution, ref: ReferenceSpace,
                    osc_mode: str = "riesz", npts_extra: int = 3) -> tuple[list, np.ndarray]:
    """Every per-step dual norm used by the reports (not squared), evaluated on ``ref``."""
    names, vals = [], []
    for n in range(1, sol.partition.N + 1):
        iv = IntervalOnReference(ref, sol, n)
        e = step_errors(problem, iv)
        names += [f"residual[{n}]", f"dual_dt_error[{n}]"]
        vals += [e.residual2, e.dual_dt2]
        if osc_mode == "riesz":
            names.append(f"eta_osc_tau[{n}]")
            vals.append(eta_osc_tau(iv, problem.f, "riesz", iv.q + npts_extra)[0])
    return names, np.sqrt(np.maximum(np.array(vals), 0.0))


def riesz_audit(problem: ManufacturedProblem, sol: DiscreteSolution, spaces: list, config,
                osc_mode: str = "riesz", tolerance: float = 0.02, base_ref: ReferenceSpace | None = None) -> RieszAudit:
    base_ref = base_ref or ReferenceSpace(spaces, config)
    names, base = dual_norm_table(problem, sol, base_ref, osc_mode)
    _, enr = dual_norm_table(problem, sol, ReferenceSpace(spaces, config.enriched()), osc_mode)
    return RieszAudit(names, base, enr, tolerance)


def write_checks_csv(checks: list, path, audit: RieszAudit | None = None, meta: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in sorted((meta or {}).items()):
            fh.write(f"# {k}: {v}\n")
        if audit is not None:
            fh.write(f"# {audit.summary()}\n")
        wr = csv.writer(fh)
        wr.writerow(["check", "n", "left", "right", "slack", "tolerance", "kind", "result"])
        for c in checks:
            wr.writerow([c.name, c.n, repr(float(c.left)), repr(float(c.right)), repr(float(c.slack)),
                         c.tolerance, c.kind, "PASS" if c.passed else "FAIL"])
