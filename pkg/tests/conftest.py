from functools import lru_cache

import numpy as np
import pytest
from hypothesis import settings

from eqflux.flux import construct_flux
from eqflux.harness import RunConfig, solve_config
from eqflux.reconstruction import IntervalData, PatchData

settings.register_profile("eqflux", max_examples=25, deadline=None)
settings.load_profile("eqflux")


class StepBundle:
    """Solution of a small run with per-step reconstruction and flux data."""

    def __init__(self, cfg: RunConfig):
        self.config = cfg
        self.problem, self.spaces, self.sol, self.geoms, self.moments = solve_config(cfg)
        self.idata, self.pdata, self.flux = [], [], []
        for n in range(1, cfg.N + 1):
            i = IntervalData(self.sol, n, self.geoms[n - 1], self.moments[n - 1])
            p = PatchData(self.geoms[n - 1], self.moments[n - 1])
            self.idata.append(i)
            self.pdata.append(p)
            self.flux.append(construct_flux(i, p))


@lru_cache(maxsize=None)
def _bundle(problem, n, N, p, q, schedule, p_region):
    return StepBundle(RunConfig(problem=problem, n=n, N=N, p=p, q=q, schedule=schedule, p_region=p_region))


def bundle(problem="MS1", n=4, N=2, p=2, q=1, schedule="base", p_region=None) -> StepBundle:
    return _bundle(problem, n, N, p, q, schedule, p_region)


@pytest.fixture(scope="session")
def small():
    return bundle()


@pytest.fixture(scope="session")
def coarsening():
    return bundle(n=4, N=3, p=2, q=2, schedule="uniform:1,base,local:1")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, printed at the end of the session
CRITERIA: dict[int, bool] = {}


def record_criterion(k: int, passed: bool) -> None:
    CRITERIA[k] = CRITERIA.get(k, True) and passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {k}: {'PASS' if CRITERIA[k] else 'FAIL'}")
