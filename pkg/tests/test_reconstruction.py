from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqflux.basis import LegendreTimeBasis
from eqflux.reconstruction import evaluate_modes, jump_energy_coefficient, radau_correction

from conftest import bundle

# int_{I_n} |grad(u - Iu)|^2 / |grad J|^2, frozen from the closed form tau (q+1) / ((2q+1)(2q+3))
JUMP_COEFFICIENTS = {0: Fraction(1, 3), 1: Fraction(2, 15), 2: Fraction(3, 35), 3: Fraction(4, 63)}


@pytest.mark.parametrize("q", sorted(JUMP_COEFFICIENTS))
def test_jump_coefficient_frozen(q):
    assert abs(jump_energy_coefficient(1.0, q) - float(JUMP_COEFFICIENTS[q])) <= 1e-15
    assert abs(jump_energy_coefficient(0.1, 2) - 3 / 350) <= 1e-15


@given(q=st.integers(0, 8), tau=st.floats(1e-3, 2.0))
def test_radau_correction_properties(q, tau):
    b = LegendreTimeBasis(0.0, tau, q)
    c = radau_correction(b)
    ends = b.phi(np.array([0.0, tau]), q + 1).T @ c
    assert np.allclose(ends, [1.0, 0.0], atol=1e-12)
    # orthogonal to P_{q-1}: only the modes q and q+1 are present
    assert np.all(c[:q] == 0.0)
    t, w = b.gauss(q + 3)
    energy = np.sum(w * (b.phi(t, q + 1).T @ c) ** 2)
    assert np.isclose(energy, jump_energy_coefficient(tau, q), rtol=1e-12)


CASES = [dict(q=0), dict(q=1), dict(q=2, schedule="uniform:1,base,local:1", N=3), dict(q=3, p=1)]


@pytest.mark.parametrize("case", CASES)
def test_radau_endpoint_values(case):
    B = bundle(**case)
    for n, d in enumerate(B.idata, start=1):
        geom = d.geom
        prev, _ = geom.values_prev(B.sol.end_value(n - 1))
        cur, _ = geom.values_cur(B.sol.end_value(n))
        I0 = evaluate_modes(d.basis, d.Iu_vals, d.basis.t0)[0]
        I1 = evaluate_modes(d.basis, d.Iu_vals, d.basis.t1)[0]
        scale = np.abs(prev).max()
        assert np.abs(I0 - prev[0]).max() <= 1e-11 * scale
        assert np.abs(I1 - cur[0]).max() <= 1e-11 * scale


@pytest.mark.parametrize("case", CASES)
def test_moment_identity_and_scheme(case):
    B = bundle(**case)
    for d in B.idata:
        ref = d.dt_moments_identity()
        assert np.abs(d.dtIu - ref).max() <= 1e-11 * max(np.abs(ref).max(), 1.0)
        assert d.scheme_identity_residual() <= 1e-11


@pytest.mark.parametrize("case", CASES)
def test_gap_energy_equals_jump_coefficient(case):
    B = bundle(**case)
    for d in B.idata:
        lhs = d.reconstruction_gap_energy()
        rhs = jump_energy_coefficient(d.tau, d.q) * d.jump_energy()
        assert abs(lhs - rhs) <= 1e-11 * max(rhs, 1e-300) + 1e-300


@pytest.mark.parametrize("case", CASES)
def test_mean_value_and_weighted_orthogonality(case):
    B = bundle(**case)
    for d, pd in zip(B.idata, B.pdata):
        mean = pd.mean_value_residual(d.F)
        scale = np.abs(np.einsum("jeq,eq->je", d.F.reshape(d.q + 1, d.nel, d.nq), d.geom.quad.weights)).max()
        assert np.abs(mean).max() <= 1e-11 * scale
        assert pd.weighted_orthogonality_residual(d.F) <= 1e-11


def test_projection_exact_for_low_degree_data():
    # f of degree <= p_a - 1 in space is reproduced by every weighted projection
    B = bundle(problem="MS2", n=2, N=2, p=4, q=1)
    for d, pd in zip(B.idata, B.pdata):
        assert np.allclose(pd.f_htau, d.F, atol=1e-12)
