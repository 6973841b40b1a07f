"""End-to-end experiments: solve, reconstruct, equilibrate, estimate, verify.

Mesh schedules are comma-separated per-step rules for the meshes of steps
1..N (step 0 uses the mesh of step 1; a short list is padded with its last
entry):

* ``base``: the uniform n x n mesh,
* ``uniform:k``: the base mesh bisected uniformly k times,
* ``local:k``: k rounds of bisection of the elements whose centroid lies
  in the lower-left quadrant [0, 1/2]^2 (with conforming closure).

Going from a finer to a coarser rule between two steps coarsens the mesh.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import (EstimatorReport, IntervalOnReference, ReferenceSpace, RieszConfig, StepEstimator,
                         eta_osc_init, global_eta, local_EY_seminorms)
from .flux import check_equilibration, construct_flux, dump_flux
from .mesh import MeshLevel, build_uniform_mesh, dump_mesh, export_vtk, refine, refine_uniform
from .metrics import (Check, ErrorReport, RieszAudit, effectivity, local_efficiency_ratios, manufactured,
                      riesz_audit, true_errors, verify_infsup_identity, verify_jump_bound,
                      verify_norm_equivalence, verify_upper_bounds, write_checks_csv)
from .reconstruction import IntervalData, PatchData
from .solver import DiscreteSolution, TimePartition, dump_checkpoint, solve
from .spaces import HpSpace


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """One experiment. Defaults give a small MS1 run with lowest-order degrees.

    problem: MS1, MS2 or MS3. n: base mesh has n x n squares split in two.
    p: spatial degree; p_region: degree in the lower-left quadrant (None: p).
    q: temporal degree; N: number of uniform time steps on (0, T).
    schedule: per-step mesh rules (module docstring).
    riesz_refinements, riesz_degree_increase: reference space for dual norms.
    osc_mode: riesz or poincare evaluation of the temporal oscillation.
    local: compute patch oscillations, local seminorms and efficiency ratios.
    audit: repeat every dual norm on an enriched reference space.
    band: relative tolerance of the inequality checks.
    equilibration_tol: bound on the scaled equilibration residual.
    output: directory for CSV reports (None: no files).
    dump: also write mesh, VTK, checkpoint and flux files.
    """

    problem: str = "MS1"
    n: int = 8
    p: int = 1
    p_region: int | None = None
    q: int = 0
    N: int = 4
    T: float = 1.0
    schedule: str = "base"
    riesz_refinements: int = 1
    riesz_degree_increase: int = 1
    osc_mode: str = "riesz"
    local: bool = False
    audit: bool = True
    band: float = 0.02
    equilibration_tol: float = 1e-9
    output: str | None = None
    dump: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem.upper() not in ("MS1", "MS2", "MS3"):
            raise ConfigError(f"problem must be MS1, MS2 or MS3, got {self.problem!r}")
        self.problem = self.problem.upper()
        for name in ("n", "p", "N"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.q < 0:
            raise ConfigError("q must be >= 0")
        if self.p_region is not None and self.p_region < 1:
            raise ConfigError("p_region must be >= 1")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if self.riesz_refinements < 0 or self.riesz_degree_increase < 0:
            raise ConfigError("Riesz enrichment must be nonnegative")
        if self.osc_mode not in ("riesz", "poincare"):
            raise ConfigError("osc_mode must be riesz or poincare")
        parse_schedule(self.schedule, self.N)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        items = [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self) if f.name not in ("output", "dump")]
        return hashlib.sha256(repr(items).encode()).hexdigest()[:12]

    @classmethod
    def from_mapping(cls, values: dict, base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        changes = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, raw, getattr(base, key), kinds[key].type)
        return dataclasses.replace(base, **changes)


def _coerce(key, raw, current, annotation):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", "") and "None" in str(annotation):
        return None
    ann = str(annotation)
    try:
        if ann.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ann.startswith("int"):
            return int(text)
        if ann.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_config_file(path) -> dict:
    """Plain-text ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for k, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def parse_schedule(schedule: str, N: int) -> list[tuple[str, int]]:
    rules = []
    for item in (s.strip() for s in schedule.split(",")):
        if not item:
            continue
        kind, _, arg = item.partition(":")
        if kind == "base" and not arg:
            rules.append(("base", 0))
        elif kind in ("uniform", "local"):
            try:
                k = int(arg)
            except ValueError:
                raise ConfigError(f"bad schedule entry {item!r}") from None
            if k < 0:
                raise ConfigError(f"bad schedule entry {item!r}")
            rules.append((kind, k) if k else ("base", 0))
        else:
            raise ConfigError(f"bad schedule entry {item!r}")
    if not rules:
        raise ConfigError("empty schedule")
    if len(rules) > N:
        raise ConfigError(f"schedule has {len(rules)} entries for {N} steps")
    return rules + [rules[-1]] * (N - len(rules))


def _in_region(points: np.ndarray) -> np.ndarray:
    return (points[:, 0] <= 0.5) & (points[:, 1] <= 0.5)


def build_mesh(base: MeshLevel, rule: tuple[str, int]) -> MeshLevel:
    kind, k = rule
    if kind == "base":
        return base
    if kind == "uniform":
        return refine_uniform(base, k)
    mesh = base
    for _ in range(k):
        mesh = refine(mesh, np.flatnonzero(_in_region(mesh.centroids())))
    return mesh


def build_spaces(config: RunConfig) -> list[HpSpace]:
    """V^0..V^N; equal schedule entries share mesh and space objects."""
    base = build_uniform_mesh(config.n)
    rules = parse_schedule(config.schedule, config.N)
    cache: dict = {}
    spaces = []
    for rule in [rules[0]] + rules:
        if rule not in cache:
            mesh = build_mesh(base, rule)
            deg = np.full(mesh.n_elements, config.p)
            if config.p_region is not None:
                deg[_in_region(mesh.centroids())] = config.p_region
            cache[rule] = HpSpace(mesh, deg)
        spaces.append(cache[rule])
    return spaces


@dataclass
class RunResult:
    config: RunConfig
    solution: DiscreteSolution
    spaces: list
    equilibration: list
    estimates: EstimatorReport | None = None
    errors: ErrorReport | None = None
    checks: list = field(default_factory=list)
    audit: RieszAudit | None = None
    local_ratios: list | None = None
    local_seminorms: list | None = None
    fluxes: list | None = None
    timings: dict = field(default_factory=dict)

    @property
    def effectivity(self) -> tuple[float, float]:
        return effectivity(self.estimates, self.errors)

    @property
    def max_equilibration(self) -> float:
        return max(r.max_ratio for r in self.equilibration)

    @property
    def passed(self) -> bool:
        ok = all(c.passed for c in self.checks)
        if self.audit is not None:
            ok = ok and self.audit.passed
        return ok

    def summary_lines(self) -> list[str]:
        lines = [f"config {self.config.digest()} {self.config.problem} n={self.config.n} N={self.config.N} "
                 f"p={self.config.p} q={self.config.q} schedule={self.config.schedule}"]
        groups: dict[str, bool] = {}
        for c in self.checks:
            groups[c.name] = groups.get(c.name, True) and c.passed
        lines += [f"{name}: {'PASS' if ok else 'FAIL'}" for name, ok in groups.items()]
        if self.audit is not None:
            lines.append(self.audit.summary())
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return lines


def solve_config(config: RunConfig):
    problem = manufactured(config.problem, config.T)
    spaces = build_spaces(config)
    part = TimePartition.uniform(config.T, config.N, config.q)
    sol, geoms, moments = solve(spaces, part, problem.f, problem.u0)
    return problem, spaces, sol, geoms, moments


def run_experiment(config: RunConfig, estimate: bool = True, verify: bool = True,
                   keep_fluxes: bool = False) -> RunResult:
    """Full pipeline for one configuration; writes reports when ``config.output`` is set."""
    clock = {}
    t0 = time.perf_counter()
    problem, spaces, sol, geoms, moments = solve_config(config)
    clock["solve"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    eq_reports, step_inputs, fluxes = [], [], []
    for n in range(1, config.N + 1):
        idata = IntervalData(sol, n, geoms[n - 1], moments[n - 1])
        pdata = PatchData(geoms[n - 1], moments[n - 1])
        flux = construct_flux(idata, pdata)
        eq_reports.append(check_equilibration(flux, idata, pdata.f_htau, config.equilibration_tol))
        step_inputs.append((idata, pdata, flux))
        if keep_fluxes or config.dump:
            fluxes.append(flux)
    clock["flux"] = time.perf_counter() - t0
    result = RunResult(config, sol, spaces, eq_reports, fluxes=fluxes or None, timings=clock)
    result.checks.append(Check("equilibration", "all", result.max_equilibration, config.equilibration_tol, 0.0))
    if not estimate:
        _write_outputs(result)
        return result

    t0 = time.perf_counter()
    rcfg = RieszConfig(config.riesz_refinements, config.riesz_degree_increase)
    ref = ReferenceSpace(spaces, rcfg)
    irefs = [IntervalOnReference(ref, sol, n) for n in range(1, config.N + 1)]
    estimators = [StepEstimator(i, p, fx, iv, sol, problem.f, config.osc_mode)
                  for (i, p, fx), iv in zip(step_inputs, irefs)]
    steps = [e.estimates(local=config.local) for e in estimators]
    report = global_eta(steps, eta_osc_init(ref, sol, problem.u0), estimators)
    report.meta = {"config": config.digest(), "shape_regularity": _shape_bound(spaces),
                   "time_quadrature_extra_points": report.quadrature_points,
                   "time_quadrature_change": f"{report.quadrature_change:.3e}"}
    result.estimates = report
    clock["estimate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result.errors = true_errors(problem, sol, ref, irefs)
    if config.local:
        locs = [local_EY_seminorms(iv, geoms[iv.n - 1], step_inputs[iv.n - 1][0], problem.dt_u, problem.grad_u)
                for iv in irefs]
        result.local_seminorms = locs
        result.local_ratios = local_efficiency_ratios(report, locs, [s.mesh for s in spaces[1:]])
    clock["errors"] = time.perf_counter() - t0
    if verify:
        t0 = time.perf_counter()
        band = config.band
        result.checks += verify_upper_bounds(report, result.errors, band)
        result.checks.append(verify_infsup_identity(result.errors))
        result.checks += verify_jump_bound(report, result.errors, band)
        result.checks += verify_norm_equivalence(report, result.errors, band)
        result.checks.append(Check("eta_recomposition", "all", report.eta_EY2,
                                   report.eta_Y2 + report.eta_J2_total, 1e-12, "identity"))
        if config.audit:
            result.audit = riesz_audit(problem, sol, spaces, rcfg, config.osc_mode, band, base_ref=ref)
        clock["verify"] = time.perf_counter() - t0
    _write_outputs(result)
    return result


def _shape_bound(spaces) -> str:
    return f"{max(float(s.mesh.shape_ratios.max()) for s in spaces):.6f}"


def _write_outputs(result: RunResult) -> None:
    cfg = result.config
    if not cfg.output:
        return
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config": cfg.digest(), "shape_regularity": _shape_bound(result.spaces)}
    if result.audit is not None:
        meta["riesz_audit"] = "PASS" if result.audit.passed else "FAIL"
    if result.estimates is not None:
        result.estimates.meta.update(meta)
        result.estimates.write_csv(out / "estimators.csv")
    if result.errors is not None:
        write_errors_csv(result, out / "errors.csv", meta)
    write_checks_csv(result.checks, out / "verification.csv", result.audit, meta)
    (out / "summary.txt").write_text("\n".join(result.summary_lines()) + "\n")
    if cfg.dump:
        dump_checkpoint(result.solution, out / "solution.txt")
        seen = []
        for k, s in enumerate(result.spaces):
            if any(s.mesh is m for m in seen):
                continue
            seen.append(s.mesh)
            dump_mesh(s.mesh, out / f"mesh{k}.txt")
            export_vtk(s.mesh, out / f"mesh{k}.vtk", cell_data={"degree": s.degrees.astype(float)})
        if result.fluxes:
            dump_flux(result.fluxes, out / "flux.txt")


def write_errors_csv(result: RunResult, path, meta: dict | None = None) -> None:
    e = result.errors
    with open(path, "w", newline="") as fh:
        for k, v in sorted((meta or {}).items()):
            fh.write(f"# {k}: {v}\n")
        wr = csv.writer(fh)
        wr.writerow(["kind", "n", "dual_dt2", "grad2", "gap2", "residual2", "jump_grad2",
                     "Y2", "EY2", "final2", "init2", "eff_EY", "eff_Y"])
        for s in e.steps:
            wr.writerow(["step", s.n, s.dual_dt2, s.grad2, s.gap2, s.residual2, s.jump_grad2,
                         "", "", "", "", "", ""])
        eff = result.effectivity
        wr.writerow(["global", "", "", "", e.X_gap2, e.residual2, "", e.Y2, e.EY2, e.final2, e.init2,
                     eff[0], eff[1]])


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

SWEEPS = ("h", "tau", "p", "q")


@dataclass
class SweepRow:
    level: int
    value: float
    h: float
    tau: float
    Y: float
    EY: float
    eta_Y: float
    eta_EY: float
    eff_EY: float
    eff_Y: float
    order_Y: float = float("nan")
    order_eta_Y: float = float("nan")
    seconds: float = 0.0


def convergence_study(base: RunConfig, sweep: str, values: list, couple_tau: bool = False,
                      path=None) -> list[SweepRow]:
    """Run ``base`` with one parameter swept; ``couple_tau`` keeps N proportional to n in h-sweeps.

    Observed orders are log(e_{k-1}/e_k) / log(x_{k-1}/x_k) with x = h for
    h-sweeps and x = tau for tau-sweeps (NaN for p and q sweeps).
    """
    if sweep not in SWEEPS:
        raise ConfigError(f"sweep must be one of {SWEEPS}")
    rows: list[SweepRow] = []
    for level, v in enumerate(values):
        if sweep == "h":
            cfg = base.replace(n=int(v))
            if couple_tau:
                cfg = cfg.replace(N=max(1, int(round(base.N * v / base.n))))
        elif sweep == "tau":
            cfg = base.replace(N=int(v))
        elif sweep == "p":
            cfg = base.replace(p=int(v))
        else:
            cfg = base.replace(q=int(v))
        cfg = cfg.replace(output=None, dump=False)
        t0 = time.perf_counter()
        res = run_experiment(cfg, verify=False)
        eff = res.effectivity
        rows.append(SweepRow(level, float(v), 1.0 / cfg.n, cfg.T / cfg.N, res.errors.Y, res.errors.EY,
                             res.estimates.eta_Y, res.estimates.eta_EY, eff[0], eff[1],
                             seconds=time.perf_counter() - t0))
    for a, b in zip(rows, rows[1:]):
        x = {"h": (a.h, b.h), "tau": (a.tau, b.tau)}.get(sweep)
        if x and x[0] != x[1]:
            r = math.log(x[0] / x[1])
            b.order_Y = math.log(a.Y / b.Y) / r
            b.order_eta_Y = math.log(a.eta_Y / b.eta_Y) / r
    if path is not None:
        write_sweep_csv(rows, path, sweep, base)
    return rows


def write_sweep_csv(rows: list, path, sweep: str, base: RunConfig) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# sweep: {sweep}\n# base config: {base.digest()}\n")
        wr = csv.writer(fh)
        names = [f.name for f in dataclasses.fields(SweepRow) if f.name != "seconds"]
        wr.writerow(names)
        for r in rows:
            wr.writerow([getattr(r, k) for k in names])


def observed_order(errors, params) -> list[float]:
    """Successive log-ratio orders of ``errors`` with respect to ``params``."""
    return [math.log(errors[k - 1] / errors[k]) / math.log(params[k - 1] / params[k])
            for k in range(1, len(errors))]
