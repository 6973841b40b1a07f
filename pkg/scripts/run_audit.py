"""Riesz audit: refine the reference space once more and report the dual-norm changes."""
from eqflux.harness import RunConfig, run_experiment


def main():
    for cfg in [RunConfig(n=4, N=4, p=1, q=0), RunConfig(n=4, N=4, p=2, q=1),
                RunConfig(problem="MS3", n=4, N=4, p=2, q=1), RunConfig(n=4, N=4, p=2, q=1, osc_mode="poincare")]:
        res = run_experiment(cfg)
        print(f"{cfg.problem} p={cfg.p} q={cfg.q} osc={cfg.osc_mode}: {res.audit.summary()}")


if __name__ == "__main__":
    main()
