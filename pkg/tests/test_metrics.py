import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqflux.harness import RunConfig, run_experiment
from eqflux.metrics import Check, RieszAudit, manufactured, write_checks_csv


@given(left=st.floats(0, 1e3), rel=st.floats(-0.5, 0.5), tol=st.floats(0, 0.1))
def test_inequality_check_band(left, rel, tol):
    right = left * (1 + rel)
    c = Check("x", 1, left, right, tol)
    expected = right - left >= -tol * max(abs(right), 1e-300) or right - left >= -1e-14
    assert c.passed == expected
    assert np.isclose(c.slack, right - left)


def test_identity_check():
    assert Check("i", 1, 1.0, 1.0 + 1e-12, 1e-11, "identity").passed
    assert not Check("i", 1, 1.0, 1.0 + 1e-9, 1e-11, "identity").passed
    assert Check("i", 1, 0.0, 1e-15, 1e-11, "identity").passed


def test_riesz_audit_logic():
    a = RieszAudit(["a", "b", "c"], np.array([1.0, 2.0, 0.0]), np.array([1.01, 2.0, 1e-20]))
    assert np.allclose(a.changes, [0.01 / 1.01, 0.0, 0.0])
    assert a.passed
    bad = RieszAudit(["a"], np.array([1.0]), np.array([1.05]))
    assert not bad.passed and "FAIL" in bad.summary() and "(a)" in bad.summary()


def test_ms3_is_ms1_plus_checkerboard_with_same_source():
    m1, m3 = manufactured("MS1"), manufactured("MS3")
    x = np.array([[0.125, 0.125], [0.3, 0.7]])
    for t in (0.0, 0.01, 0.5):
        assert np.allclose(m3.f(x, t), m1.f(x, t))
    diff = m3.u0(x) - m1.u0(x)
    assert np.allclose(diff, 0.1 * np.sin(4 * np.pi * x[:, 0]) * np.sin(4 * np.pi * x[:, 1]))


def test_unknown_problem():
    with pytest.raises(ValueError):
        manufactured("MS9")


@pytest.fixture(scope="module")
def coarse_run():
    return run_experiment(RunConfig(n=4, N=4, p=2, q=1, schedule="uniform:1,base,uniform:1,base"))


def test_all_checks_pass_with_coarsening(coarse_run):
    failed = [c for c in coarse_run.checks if not c.passed]
    assert not failed, failed
    assert coarse_run.audit.passed
    assert any(s.eta_C2 > 0 for s in coarse_run.estimates.steps)


def test_error_report_consistency(coarse_run):
    e = coarse_run.errors
    assert e.EY2 >= e.Y2 > 0
    assert np.isclose(e.EY ** 2, e.EY2)
    eff = coarse_run.effectivity
    assert 1.0 <= eff[0] <= 10 and 1.0 <= eff[1] <= 10


def test_checks_csv(coarse_run, tmp_path):
    write_checks_csv(coarse_run.checks, tmp_path / "v.csv", coarse_run.audit, {"config": "abc"})
    text = (tmp_path / "v.csv").read_text().splitlines()
    assert text[0] == "# config: abc"
    assert text[1].startswith("# riesz audit:")
    rows = list(csv.DictReader(text[2:]))
    assert len(rows) == len(coarse_run.checks)
    assert {r["result"] for r in rows} == {"PASS"}
