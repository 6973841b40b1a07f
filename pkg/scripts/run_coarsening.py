"""Forced coarsening: locally refined steps followed by coarser meshes, eta_C > 0."""
import sys

from eqflux.harness import RunConfig, run_experiment


def main(output="results/coarsening"):
    for schedule in ["uniform:1,base,uniform:1,base", "uniform:2,local:1,base,base"]:
        cfg = RunConfig(n=4, N=4, p=2, q=1, schedule=schedule, output=f"{output}/{schedule.replace(',', '_')}")
        res = run_experiment(cfg)
        eta_C2 = sum(s.eta_C2 for s in res.estimates.steps)
        print(f"schedule {schedule}: eta_C = {eta_C2 ** 0.5:.3e}, passed = {res.passed}")
        for line in res.summary_lines():
            print("  " + line)


if __name__ == "__main__":
    main(*sys.argv[1:])
