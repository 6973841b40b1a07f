"""Command line interface: ``eqflux {solve,estimate,verify,sweep}``.

Every RunConfig field has a flag; ``--config FILE`` reads ``key = value``
lines that override the flags. ``verify`` exits with status 0 iff every
enabled verification passes.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .flux import dump_flux
from .harness import (SWEEPS, ConfigError, RunConfig, convergence_study, parse_config_file, run_experiment,
                      solve_config, write_sweep_csv)
from .mesh import dump_mesh, export_vtk
from .solver import dump_checkpoint


def _flag_type(f: dataclasses.Field):
    ann = str(f.type)
    if ann.startswith("bool"):
        return None
    if ann.startswith("int"):
        return int
    if ann.startswith("float"):
        return float
    return str


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    defaults = RunConfig()
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = _flag_type(f)
        if kind is None:
            parser.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None,
                                help=f"(default {getattr(defaults, f.name)})")
        else:
            parser.add_argument(flag, dest=f.name, type=kind, default=None,
                                help=f"(default {getattr(defaults, f.name)})")
    parser.add_argument("--config", dest="config_file", default=None, help="key = value file; overrides flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqflux", description="hp-FEM/DG heat solver with flux estimators")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("solve", "solve and write checkpoint, meshes and VTK"),
                       ("estimate", "solve, equilibrate and write the estimator report"),
                       ("verify", "estimate, compare with exact errors and check every bound"),
                       ("sweep", "convergence study over one parameter")]:
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        if name == "sweep":
            p.add_argument("--sweep", choices=SWEEPS, required=True)
            p.add_argument("--values", required=True, help="comma-separated parameter values")
            p.add_argument("--couple-tau", action="store_true", help="keep N proportional to n in h-sweeps")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)
             if getattr(args, f.name, None) is not None}
    cfg = RunConfig.from_mapping(flags)
    if args.config_file:
        cfg = RunConfig.from_mapping(parse_config_file(args.config_file), base=cfg)
    return cfg


def _cmd_solve(cfg: RunConfig) -> int:
    _, spaces, sol, _, _ = solve_config(cfg)
    out = Path(cfg.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    dump_checkpoint(sol, out / "solution.txt")
    seen = []
    for k, s in enumerate(spaces):
        if any(s.mesh is m for m in seen):
            continue
        seen.append(s.mesh)
        dump_mesh(s.mesh, out / f"mesh{k}.txt")
        export_vtk(s.mesh, out / f"mesh{k}.vtk", cell_data={"degree": s.degrees.astype(float)})
    print(f"config {cfg.digest()}: solved {cfg.N} steps, {sum(s.ndof for s in spaces[1:])} spatial dofs, "
          f"wrote {out}")
    return 0


def _cmd_estimate(cfg: RunConfig) -> int:
    res = run_experiment(cfg, verify=False, keep_fluxes=True)
    est = res.estimates
    print(f"config {cfg.digest()}: eta_Y = {est.eta_Y:.6e}, eta_EY = {est.eta_EY:.6e}, "
          f"max equilibration residual = {res.max_equilibration:.3e}")
    if cfg.output:
        dump_flux(res.fluxes, Path(cfg.output) / "flux.txt")
    return 0


def _cmd_verify(cfg: RunConfig) -> int:
    res = run_experiment(cfg)
    eff = res.effectivity
    print(f"effectivity: eta_EY/EY = {eff[0]:.4f}, eta_Y/Y = {eff[1]:.4f}")
    for line in res.summary_lines():
        print(line)
    return 0 if res.passed else 1


def _cmd_sweep(cfg: RunConfig, args) -> int:
    values = [int(v) for v in args.values.split(",")]
    rows = convergence_study(cfg, args.sweep, values, couple_tau=args.couple_tau)
    if cfg.output:
        Path(cfg.output).mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, Path(cfg.output) / f"sweep_{args.sweep}.csv", args.sweep, cfg)
    print(f"{'value':>8} {'Y':>12} {'eta_Y':>12} {'EY':>12} {'eta_EY':>12} {'order_Y':>8} {'eff_EY':>7}")
    for r in rows:
        print(f"{r.value:8g} {r.Y:12.5e} {r.eta_Y:12.5e} {r.EY:12.5e} {r.eta_EY:12.5e} {r.order_Y:8.3f} "
              f"{r.eff_EY:7.3f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"eqflux: {exc}", file=sys.stderr)
        return 2
    if args.command == "solve":
        return _cmd_solve(cfg)
    if args.command == "estimate":
        return _cmd_estimate(cfg)
    if args.command == "verify":
        return _cmd_verify(cfg)
    return _cmd_sweep(cfg, args)


if __name__ == "__main__":
    sys.exit(main())
