"""Equilibration and effectivity on the MS1 grid n x N x p x q."""
import itertools
import sys
import time

from eqflux.harness import RunConfig, run_experiment


def main(output="results/grid"):
    t0 = time.perf_counter()
    print(f"{'n':>3} {'N':>3} {'p':>2} {'q':>2} {'equil':>10} {'eff_EY':>7} {'eff_Y':>7} passed")
    for n, N, p, q in itertools.product([8, 16], [4, 8], [1, 2, 3], [0, 1, 2]):
        cfg = RunConfig(n=n, N=N, p=p, q=q, audit=False, output=f"{output}/n{n}_N{N}_p{p}_q{q}")
        res = run_experiment(cfg)
        eff = res.effectivity
        print(f"{n:3d} {N:3d} {p:2d} {q:2d} {res.max_equilibration:10.2e} {eff[0]:7.3f} {eff[1]:7.3f} {res.passed}")
    print(f"total {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main(*sys.argv[1:])
