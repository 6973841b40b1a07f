"""Convergence sweeps in h (tau proportional to h), tau, p and q."""
import sys

from eqflux.harness import RunConfig, convergence_study


def show(label, rows):
    print(label)
    for r in rows:
        print(f"  {r.value:6g}  Y={r.Y:.4e}  eta_Y={r.eta_Y:.4e}  order_Y={r.order_Y:6.3f}  eff_EY={r.eff_EY:.3f}")


def main(output="results/sweeps"):
    base = RunConfig(audit=False)
    show("h-sweep (p=1, q=0, tau = 2h)",
         convergence_study(base.replace(p=1, q=0), "h", [4, 8, 16, 32], couple_tau=True, path=f"{output}/h.csv"))
    show("tau-sweep (p=3, q=0, n=8)",
         convergence_study(base.replace(p=3, q=0, n=8), "tau", [2, 4, 8, 16], path=f"{output}/tau.csv"))
    show("p-sweep (n=8, N=4, q=1)", convergence_study(base.replace(q=1), "p", [1, 2, 3, 4], path=f"{output}/p.csv"))
    show("q-sweep (n=8, N=4, p=2)", convergence_study(base.replace(p=2), "q", [0, 1, 2, 3], path=f"{output}/q.csv"))


if __name__ == "__main__":
    main(*sys.argv[1:])
