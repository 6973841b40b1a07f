import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqflux.flux import (_check_compatibility, build_patch_rhs, check_equilibration, construct_flux, dump_flux,
                         load_flux, normal_jump_audit, solve_patch_flux, solve_patch_flux_spacetime,
                         telescoping_residual)
from eqflux.reconstruction import IntervalData, PatchData
from eqflux.spaces import SaddlePointError

from conftest import bundle

CASES = [dict(q=0, p=1), dict(q=1), dict(q=2, schedule="uniform:1,base,local:1", N=3),
         dict(q=1, p=1, p_region=3, schedule="local:1")]


@pytest.mark.parametrize("case", CASES)
def test_flux_is_equilibrated(case):
    B = bundle(**case)
    for d, pd, fx in zip(B.idata, B.pdata, B.flux):
        rep = check_equilibration(fx, d, pd.f_htau)
        assert rep.passed and rep.max_ratio <= 1e-9


@pytest.mark.parametrize("case", CASES)
def test_normal_continuity_and_telescoping(case):
    B = bundle(**case)
    for fx, pd in zip(B.flux, B.pdata):
        scale = np.abs(fx.values).max()
        assert normal_jump_audit(fx, n_edges=20, n_points=3) <= 1e-10 * scale
        assert telescoping_residual(fx.problem, pd.f_htau) <= 1e-11 * max(np.abs(pd.f_htau).max(), 1.0)


@pytest.mark.parametrize("case", CASES[:3])
def test_decoupled_equals_coupled(case):
    B = bundle(**case)
    fx = B.flux[-1]
    for a in range(0, len(fx.problem.patches), 3):
        dec = solve_patch_flux(fx.problem, a).sigma
        cou = solve_patch_flux_spacetime(fx.problem, a)
        assert np.abs(dec - cou).max() <= 1e-11 * max(np.abs(dec).max(), 1e-300)


def test_corrupted_coefficient_fails_audit():
    B = bundle(problem="MS2", n=2, N=2, p=4, q=1)
    d, pd = B.idata[0], B.pdata[0]
    fx = construct_flux(d, pd)
    assert check_equilibration(fx, d, pd.f_htau).passed
    p = next(iter(fx.coeffs))
    row = fx.coeffs[p].shape[0] // 2
    fx.corrupt(p, row, dof=fx.coeffs[p].shape[1] - 1)
    assert not check_equilibration(fx, d, pd.f_htau).passed


def test_compatibility_holds_for_interior_patches_and_catches_tampering():
    B = bundle()
    d, pd = B.idata[0], B.pdata[0]
    pb = B.flux[0].problem
    interior = [a for a, pt in enumerate(pb.patches) if pt.is_interior]
    assert interior
    for a in interior:
        rhs = build_patch_rhs(pb, a)
        assert np.all(np.abs(rhs.mean) <= 1e-11 * np.maximum(rhs.norm, 1e-300))
    rhs = build_patch_rhs(pb, interior[0])
    rhs.mean = rhs.mean + 1e-3 * rhs.norm
    with pytest.raises(SaddlePointError):
        _check_compatibility(pb, interior[0], rhs, 1e-9)


def test_incompatible_solution_rejected():
    B = bundle()
    d0 = B.idata[0]
    sol = B.sol
    sol_bad = type(sol)(sol.partition, sol.spaces, sol.initial, [c * 1.01 for c in sol.coeffs])
    d = IntervalData(sol_bad, 1, d0.geom, d0.F)
    with pytest.raises(SaddlePointError):
        construct_flux(d, PatchData(d0.geom, d0.F))


@given(st.integers(0, 2 ** 31 - 1))
def test_flux_evaluate_matches_stored_values(seed):
    B = bundle(q=1)
    fx = B.flux[0]
    fine = fx.problem.geom.fine
    k = int(np.random.default_rng(seed).integers(fine.n_elements))
    nq = fx.problem.geom.nq
    pts = fx.problem.geom.quad.points[k]
    vals = fx.evaluate(k, pts)
    assert np.allclose(vals, fx.values.reshape(fx.q + 1, -1, nq, 2)[:, k], atol=1e-11)


def test_flux_dump_roundtrip(tmp_path):
    B = bundle(q=1)
    dump_flux(B.flux, tmp_path / "f.txt")
    steps = load_flux(tmp_path / "f.txt")
    assert len(steps) == len(B.flux)
    fx = B.flux[0]
    for p, C in fx.coeffs.items():
        grp = fx.problem.pdata.groups[p]
        e, i = int(grp.elements[0]), int(grp.local_vertex[0])
        pp, block = steps[0][(e, i)]
        assert pp == p
        assert np.array_equal(block, C[0])
