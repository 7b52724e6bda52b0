import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DIR_1, DIR_2, reference_scenario
from dopploc import analysis as an
from dopploc import fim
from dopploc.geometry import KNOWN_VELOCITY, MOBILE, STATIONARY, Scenario
from dopploc.harness import random_scenario
from oracles import mp_inverse, mp_inverse_from_factor, mp_schur, rel_err


def _setup(sc, cfg, pilots):
    F1, F2, _ = an.approx_diagonal_fim(fim.channel_efim(sc, cfg, pilots))
    R = an.reorder_jacobian(None, sc)
    return R, F1, F2


def _approx_state_fim(R, F1, F2):
    J = R.assemble()
    F = np.zeros((J.shape[1], J.shape[1]))
    n = F1.shape[0]
    F[:n, :n] = F1
    F[n:, n:] = F2
    return J @ F @ J.T


def test_reordered_blocks(cfg, pilots, scen1):
    R = an.reorder_jacobian(None, scen1)
    L = scen1.num_ips
    assert R.A.shape == (2 * L + 3, 2 * L + 2)
    assert R.D.shape == (2, L + 1)
    np.testing.assert_array_equal(R.O, 0.0)
    # permutation round trip: reassembling undoes the column reorder
    J = fim.mode_jacobian(scen1)
    back = np.empty_like(J)
    back[:, R.column_order] = R.assemble()
    np.testing.assert_array_equal(back, J)


def test_mobility_block_linear_in_speed():
    a = an.reorder_jacobian(None, reference_scenario(2.0))
    b = an.reorder_jacobian(None, reference_scenario(6.0))
    np.testing.assert_allclose(b.B, 3 * a.B, rtol=1e-12, atol=1e-30)
    np.testing.assert_allclose(a.A, b.A, rtol=1e-14)
    np.testing.assert_allclose(a.D, b.D, rtol=1e-14)
    z = an.reorder_jacobian(None, reference_scenario(0.0), direction=DIR_1)
    np.testing.assert_array_equal(z.B, 0.0)
    np.testing.assert_allclose(z.B_bar, a.B_bar, rtol=1e-12)


def test_zero_speed_needs_direction():
    with pytest.raises(an.AnalysisError):
        an.reorder_jacobian(None, reference_scenario(0.0))


def test_approx_fim_is_diagonal(cfg, pilots, scen1):
    efim = fim.channel_efim(scen1, cfg, pilots)
    F1, F2, singular = an.approx_diagonal_fim(efim)
    assert not singular
    cov = mp_inverse(efim.matrix)
    prec = 1 / np.diag(cov)[an.reorder_columns(2)]
    np.testing.assert_allclose(np.diag(F1), prec[:6], rtol=1e-8)
    np.testing.assert_allclose(np.diag(F2), prec[6:], rtol=1e-8)
    assert np.count_nonzero(F1 - np.diag(np.diag(F1))) == 0


def test_clock_row_has_no_mobility_gain(cfg, pilots, scen1):
    dec = an.decompose(scen1, cfg, pilots)
    n = 2 * scen1.num_ips + 2
    np.testing.assert_array_equal(dec.B_G_bar[n], 0.0)
    np.testing.assert_array_equal(dec.B_G_bar[:, n], 0.0)


def test_mobility_gain_exceeds_loss_on_random_scenarios(cfg, pilots):
    rng = np.random.default_rng(3)
    for _ in range(100):
        sc = random_scenario(rng, 2, True, MOBILE)
        dec = an.decompose(sc, cfg, pilots)
        net = dec.B_G_bar - dec.B_L_bar
        scale = np.abs(dec.B_G_bar).max()
        assert np.linalg.eigvalsh(net).min() >= -1e-9 * scale
        np.testing.assert_allclose(net, dec.net_gain_factor @ dec.net_gain_factor.T, atol=1e-9 * scale)


def test_position_clock_efim_matches_direct_schur(cfg, pilots):
    for sc in (reference_scenario(10, DIR_1), reference_scenario(0.5, DIR_2), reference_scenario(40, DIR_1)):
        R, F1, F2 = _setup(sc, cfg, pilots)
        dec = an.efim_decomposition(R, F1, F2)
        full = _approx_state_fim(R, F1, F2)
        top, vel = list(range(7)), [7, 8]
        assert rel_err(dec.E_s, mp_schur(full, top, vel)) < 1e-8
        assert rel_err(dec.E_v, mp_schur(full, vel, top)) < 1e-8


def test_position_efim_lemma(cfg, pilots, scen1):
    dec = an.decompose(scen1, cfg, pilots)
    E_p, E_c = an.position_clock_efim(dec)
    pos, clk = list(range(6)), [6]
    assert rel_err(E_p, mp_schur(dec.E_s, pos, clk)) < 1e-8
    assert E_c == pytest.approx(mp_schur(dec.E_s, clk, pos)[0, 0], rel=1e-8)
    # A0 + v^2 B0 form of the same matrix
    assert rel_err(E_p, dec.A0 + dec.speed ** 2 * dec.B0) < 1e-8


def test_stationary_position_info_is_singular(cfg, pilots, scen1):
    dec = an.decompose(scen1, cfg, pilots)
    assert np.linalg.matrix_rank(dec.A0_factor, tol=1e-10 * np.linalg.norm(dec.A0_factor, 2)) == 5
    # the net mobility gain has rank L - 1 in the position-clock space
    B0f = dec.B0_factor
    assert np.linalg.matrix_rank(B0f, tol=1e-10 * np.linalg.norm(B0f, 2)) == scen1.num_ips - 1


def test_miller_recursion_exact_on_full_rank_terms():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 4))
    E = X @ X.T + np.eye(4)
    M, flagged = an.miller_limit(np.linalg.inv(E), an.rank_one_terms(np.eye(4)))
    assert not flagged
    np.testing.assert_allclose(M, 0.0, atol=1e-10)
    u = rng.normal(size=4)
    M, _ = an.miller_limit(np.linalg.inv(E), [np.outer(u, u)])
    # limit is the inverse restricted to the orthogonal complement of u
    np.testing.assert_allclose(M @ u, 0.0, atol=1e-10)


def test_asymptotic_limit_matches_direct_inverse(cfg, pilots):
    for d in (DIR_1, DIR_2):
        dec = an.decompose(reference_scenario(10, d), cfg, pilots)
        lim = an.asymptotic_limit(dec)
        assert lim.a0_singular and not lim.flagged
        ref = mp_inverse_from_factor(dec.position_factor(1e6))
        assert rel_err(lim.position_cov, ref) < 1e-6
        assert rel_err(an.direct_position_inverse(dec, 1e6), ref) < 1e-6


def test_decomposition_bounds_match_approx_model(cfg, pilots, scen2):
    dec = an.decompose(scen2, cfg, pilots)
    b = an.decomposition_bounds(dec)
    ref = fim.compute_approx_bounds(scen2, cfg, pilots)
    assert b.peb == pytest.approx(ref.peb, rel=1e-8)
    assert b.ceb == pytest.approx(ref.ceb, rel=1e-8)
    assert b.veb == pytest.approx(ref.veb, rel=1e-8)
    assert b.meb == pytest.approx(ref.meb, rel=1e-8)


def test_velocity_bound_nondecreasing(cfg, pilots):
    speeds = np.logspace(-2, 2, 41)
    for d in (DIR_1, DIR_2):
        R, F1, F2 = _setup(reference_scenario(10, d), cfg, pilots)
        curve = an.veb_growth(R, F1, F2, speeds)
        assert curve.veb_nondecreasing
        assert np.all(np.diff(curve.peb) <= 1e-9 * curve.peb[:-1])


def test_veb_growth_rejects_unsorted_grid(cfg, pilots, scen1):
    R, F1, F2 = _setup(scen1, cfg, pilots)
    with pytest.raises(ValueError):
        an.veb_growth(R, F1, F2, [1.0, 0.5])


def test_zero_speed_velocity_info(cfg, pilots):
    R, F1, F2 = _setup(reference_scenario(10.0), cfg, pilots)
    dec = an.efim_decomposition(R.at_speed(0.0), F1, F2)
    np.testing.assert_array_equal(dec.E_v, dec.D0)
    np.testing.assert_array_equal(dec.D_L, 0.0)


def test_saturation_speed():
    s = np.logspace(-3, 3, 61)
    vals = 1 + 1 / (1 + s ** 2)
    sat = an.saturation_speed(s, vals)
    assert sat is not None and 1 < sat < 100
    assert an.saturation_speed(s, s) is None


# unknowns and measurements as (constant, per-path) coefficients
@pytest.mark.parametrize("label,los,mob,unknowns,meas,min_nlos", [
    ("With LOS (stationary)", True, STATIONARY, (3, 2), (2, 2), None),
    ("Without LOS (stationary)", False, STATIONARY, (3, 2), (0, 2), None),
    ("With LOS (mobile)", True, MOBILE, (5, 2), (3, 3), 2),
    ("Without LOS (mobile)", False, MOBILE, (5, 2), (0, 3), 5),
    ("With LOS (known v)", True, KNOWN_VELOCITY, (3, 2), (2, 3), 1),
    ("Without LOS (known v)", False, KNOWN_VELOCITY, (3, 2), (0, 3), 3),
])
def test_solvability_table(label, los, mob, unknowns, meas, min_nlos):
    assert (label, los, mob) in an.TABLE_ROWS
    for L in range(8):
        v = an.solvability(L, los, mob)
        assert v.unknowns == unknowns[0] + unknowns[1] * L
        assert v.measurements == meas[0] + meas[1] * L
        assert v.min_nlos == min_nlos
        assert v.solvable == (min_nlos is not None and L >= min_nlos)


@given(L=st.integers(0, 20), los=st.booleans(), mob=st.sampled_from([STATIONARY, MOBILE, KNOWN_VELOCITY]))
def test_solvability_monotone_in_paths(L, los, mob):
    if an.solvability(L, los, mob).solvable:
        assert an.solvability(L + 1, los, mob).solvable


def test_rank_at_speed_one(cfg, pilots):
    check = an.numerical_rank_check(reference_scenario(1.0), cfg, pilots)
    assert check.rank == 9 and check.full_rank and check.position_clock_rank == 7


def test_rank_near_zero_speed(cfg, pilots):
    check = an.numerical_rank_check(reference_scenario(1e-9), cfg, pilots)
    # position-clock information collapses to the stationary rank
    assert check.position_clock_rank == 2 * 2 + 2
    assert not check.full_rank


def test_rank_without_los_five_paths(cfg, pilots):
    rng = np.random.default_rng(2)
    sc = random_scenario(rng, 5, False, MOBILE)
    check = an.numerical_rank_check(sc, cfg, pilots)
    assert check.dim == 15 and check.rank == 15
    sc4 = random_scenario(rng, 4, False, MOBILE)
    assert not an.numerical_rank_check(sc4, cfg, pilots).full_rank


def test_speed_analysis_requires_los():
    sc = Scenario([5, 2], [[-6, 8], [8, 6]], velocity=[1, 0], has_los=False)
    with pytest.raises(an.AnalysisError):
        an.reorder_jacobian(None, sc)
