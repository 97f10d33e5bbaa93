import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fim.errors import NumericError, OverflowRisk, ValidationError
from fim.fisher import ANALYTIC, DerivativeScheme, xi_ratio
from fim.process import window_distribution
from fim.spinchain import (
    NNN_PANELS,
    SCAN_COLUMNS,
    SpinChainModel,
    as_markov_model,
    brute_force_marginal,
    build_transfer_matrix,
    energy_per_site,
    factorization_defect,
    ising_points,
    marginal,
    marginal_blocks,
    nnn_points,
    rate_fisher,
    report_row,
    scan_maps,
    specific_heat,
    thermal_fisher,
    thermometry_report,
    up_probability_slope,
    verify_chain_markov_order,
    zero_derivative_curve,
)

CENTRAL_T = DerivativeScheme("central", richardson=True)

chains = st.builds(
    SpinChainModel,
    st.floats(-2, 2),
    st.one_of(
        st.tuples(st.floats(-2, 2).filter(lambda j: abs(j) > 0.05)),
        st.tuples(st.floats(-2, 2), st.floats(-1.5, 1.5).filter(lambda j: abs(j) > 0.05)),
    ),
    st.floats(0.4, 5),
)


# --- model and transfer matrix -----------------------------------------------------------------


def test_model_trims_trailing_zero_couplings():
    assert SpinChainModel(1.0, (0.5, 0.0), 1.0).R == 1
    assert SpinChainModel(1.0, (0.0, 0.0), 1.0).J == (0.0,)
    assert SpinChainModel(1.0, (0.5, -0.2), 1.0).R == 2
    with pytest.raises(ValidationError):
        SpinChainModel(1.0, (1.0,), 0.0)


def test_nearest_neighbour_matrix():
    tm = build_transfer_matrix(SpinChainModel(0.0, (1.0,), 1.0))
    e = math.e
    assert np.allclose(tm.full_matrix, [[e, 1 / e], [1 / e, e]], rtol=1e-14)
    assert tm.full_eigenvalue == pytest.approx(e + 1 / e, rel=1e-14)
    B, J, T = 0.7, -0.4, 1.3
    V = build_transfer_matrix(SpinChainModel(B, (J,), T)).full_matrix
    expected = np.array(
        [[math.exp((J + B) / T), math.exp(-J / T)], [math.exp(-J / T), math.exp((J - B) / T)]]
    )
    assert np.allclose(V, expected, rtol=1e-13)


def test_nnn_matrix_sparsity():
    tm = build_transfer_matrix(SpinChainModel(1.0, (0.5, -0.3), 0.8))
    assert tm.matrix.shape == (4, 4)
    assert np.all((tm.matrix > 0).sum(axis=1) == 2)
    for eta in range(4):
        for nxt in np.nonzero(tm.matrix[eta])[0]:
            assert nxt // 2 == eta % 2  # suffix of eta is prefix of eta'


@given(chains)
def test_perron_pair(model):
    tm = build_transfer_matrix(model)
    assert tm.left @ tm.right == pytest.approx(1.0, rel=1e-12)
    assert np.all(tm.left > 0) and np.all(tm.right > 0)
    assert np.allclose(tm.matrix @ tm.right, tm.eigenvalue * tm.right, rtol=1e-10, atol=1e-300)
    assert np.allclose(tm.left @ tm.matrix, tm.eigenvalue * tm.left, rtol=1e-10, atol=1e-300)
    assert 0 < tm.gap <= 1


def test_overflow_risk():
    with pytest.raises(OverflowRisk):
        build_transfer_matrix(SpinChainModel(1.0, (1.0,), 1e-3))
    build_transfer_matrix(SpinChainModel(1.0, (1.0,), 0.01))  # large but representable after shifting


# --- marginals ---------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "B,J,T",
    [(0.5, (1.0,), 1.0), (0.5, (-1.0,), 1.5), (2.0, (-1.0,), 1.0), (1.0, (2.0, 0.5), 3.0), (1.0, (-0.1, 0.3), 0.9)],
)
def test_marginals_match_periodic_enumeration(B, J, T):
    model = SpinChainModel(B, J, T)
    for m in (1, 2, 3):
        assert np.abs(marginal(model, m).probs - brute_force_marginal(model, 14, m)).max() <= 1e-3


@given(chains, st.integers(1, 6))
def test_marginals_normalized_and_consistent(model, m):
    P = marginal(model, m + 1).probs
    assert abs(P.sum() - 1) <= 1e-10
    assert np.all(P > 0) and np.all(P < 1)
    shorter = marginal(model, m).probs
    assert np.abs(P.sum(axis=-1) - shorter).max() <= 1e-10
    assert np.abs(P.sum(axis=0) - shorter).max() <= 1e-10


@given(chains, st.integers(1, 5))
def test_block_matrix_routes_agree(model, m):
    direct = marginal(model, m).probs
    for drop in ("tail", "head"):
        assert np.abs(marginal_blocks(model, m, drop).probs - direct).max() <= 1e-10


@given(chains, st.integers(1, 5))
def test_markov_representation_reproduces_marginals(model, m):
    P = window_distribution(as_markov_model(model), m).probs
    assert np.abs(P - marginal(model, m).probs).max() <= 1e-10


@given(st.one_of(st.tuples(st.floats(-2, 2)), st.tuples(st.floats(-2, 2), st.floats(-2, 2))), st.floats(0.2, 5))
def test_spin_flip_symmetry_at_zero_field(J, T):
    P = marginal(SpinChainModel(0.0, J, T), 4).probs
    assert np.abs(P - P[::-1, ::-1, ::-1, ::-1]).max() <= 1e-12


def test_zero_field_single_spin_is_fair():
    for J, T in [(1.0, 0.3), (-2.0, 1.0), (0.5, 7.0)]:
        assert marginal(SpinChainModel(0.0, (J,), T), 1).probs == pytest.approx([0.5, 0.5], abs=1e-14)


def test_ground_state_limits():
    T = 0.02
    ferro = marginal(SpinChainModel(0.5, (1.0,), T), 2).probs
    assert ferro[0, 0] == pytest.approx(1.0, abs=1e-9)
    anti = marginal(SpinChainModel(0.5, (-1.0,), T), 2).probs
    assert anti[0, 1] == pytest.approx(0.5, abs=1e-9)
    assert anti[1, 0] == pytest.approx(0.5, abs=1e-9)
    # beyond B/J = -2 the field aligns the antiferromagnet
    aligned = marginal(SpinChainModel(2.5, (-1.0,), T), 2).probs
    assert aligned[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_marginal_length_validated():
    with pytest.raises(ValidationError):
        marginal(SpinChainModel(0.0, (1.0,), 1.0), 0)
    with pytest.raises(ValidationError):
        marginal_blocks(SpinChainModel(0.0, (1.0, 0.2), 1.0), 3, drop="middle")


# --- thermal Fisher information ----------------------------------------------------------------


@given(chains, st.integers(1, 4))
def test_central_and_analytic_temperature_derivatives(model, m):
    a = thermal_fisher(model, m, ANALYTIC)
    c = thermal_fisher(model, m, CENTRAL_T)
    assert c == pytest.approx(a, rel=1e-6, abs=1e-12)


def test_zero_field_information():
    for J in (1.0, -0.7):
        for T in (0.3, 1.0, 4.0):
            model = SpinChainModel(0.0, (J,), T)
            assert thermal_fisher(model, 1, ANALYTIC) <= 1e-28
            assert thermal_fisher(model, 2) > 0


@pytest.mark.parametrize("B,T", [(0.7, 0.5), (1.5, 2.0)])
def test_independent_spins_are_additive(B, T):
    model = SpinChainModel(B, (0.0,), T)
    F1 = thermal_fisher(model, 1)
    x = B / T
    # single-spin information about T for P(up) = e^x / (2 cosh x)
    assert F1 == pytest.approx((x / T) ** 2 / math.cosh(x) ** 2, rel=1e-8)
    for m in (2, 3, 5):
        assert thermal_fisher(model, m) == pytest.approx(m * F1, rel=1e-8)


@given(chains)
def test_report_identities(model):
    rep = thermometry_report(model)
    assert rep.F1 >= 0
    assert rep.F12 >= rep.F1 * (1 - 1e-9)
    assert rep.delta_F == pytest.approx(rep.F12 - 2 * rep.F1, abs=1e-15)
    if rep.F1 > 1e-10:
        assert rep.xi == pytest.approx(1 + rep.delta_F / (2 * rep.F1), rel=1e-12)
        assert rep.xi == pytest.approx(xi_ratio(rep.F12, rep.F1), rel=1e-15)
    assert math.isfinite(rep.c)


def test_rate_for_nnn_uses_three_spin_window():
    model = SpinChainModel(1.0, (0.6, -0.4), 1.2)
    rep = thermometry_report(model)
    F3 = thermal_fisher(model, 3)
    F2 = thermal_fisher(model, 2)
    assert rep.f == pytest.approx(F3 - F2, rel=1e-9)
    assert rate_fisher(model, ANALYTIC) == pytest.approx(rep.f, rel=1e-6)


# --- heat capacity -------------------------------------------------------------------------------


@pytest.mark.parametrize("B,T", [(0.7, 0.2), (0.7, 1.0), (-1.3, 3.0)])
def test_paramagnet_heat_capacity(B, T):
    x = B / T
    c, c_T2 = specific_heat(SpinChainModel(B, (0.0,), T))
    assert c == pytest.approx(x**2 / math.cosh(x) ** 2, rel=1e-10)
    assert c_T2 == pytest.approx(c / T**2)


def test_zero_field_heat_capacity_closed_form():
    for T in (0.3, 1.0, 2.5):
        x = 1.0 / T
        assert specific_heat(SpinChainModel(0.0, (1.0,), T))[0] == pytest.approx(x**2 / math.cosh(x) ** 2, rel=1e-9)


def test_energy_per_site_matches_log_partition_slope():
    model = SpinChainModel(0.4, (0.9, -0.3), 1.1)
    beta, h = 1 / model.T, 1e-5

    def log_lam(b):
        return build_transfer_matrix(model.with_T(1 / b)).log_eigenvalue

    numeric = -(log_lam(beta + h) - log_lam(beta - h)) / (2 * h)
    assert energy_per_site(model) == pytest.approx(numeric, rel=1e-8)


@given(chains)
def test_heat_capacity_routes_agree(model):
    exact = specific_heat(model)[0]
    numeric = specific_heat(model, CENTRAL_T)[0]
    # rounding floor of a difference quotient of u with step 1e-3 T
    floor = 1e-13 * max(1.0, abs(energy_per_site(model))) / (1e-3 * model.T)
    assert numeric == pytest.approx(exact, rel=1e-5, abs=floor)


@given(chains)
def test_heat_capacity_equals_fisher_rate(model):
    rep = thermometry_report(model)
    assert rep.c_over_T2 == pytest.approx(rep.f, rel=1e-4)


def test_high_temperature_heat_capacity_vanishes():
    assert specific_heat(SpinChainModel(0.5, (1.0,), 500.0))[0] < 1e-5


# --- regimes and zero-derivative curve -----------------------------------------------------------


def test_antiferromagnet_is_super_additive():
    assert thermometry_report(SpinChainModel(0.5, (-1.0,), 0.5)).xi > 10


def test_ferromagnet_is_sub_additive_at_moderate_field():
    for T in (0.5, 1.0, 2.0):
        assert thermometry_report(SpinChainModel(1.0, (1.0,), T)).xi < 1


def test_zero_field_flags_divergence():
    for T in (0.05, 0.5, 5.0):
        assert thermometry_report(SpinChainModel(0.0, (1.0,), T)).xi_diverged


def test_zero_derivative_curve():
    scan = zero_derivative_curve([-3.0, -2.5, -1.0, -0.5, 0.0])
    assert scan.degenerate == (0.0,)
    ratios = [r for r, _ in scan.roots]
    assert ratios == [-1.0, -0.5]
    for ratio, T_star in scan.roots:
        model = SpinChainModel(-ratio, (-1.0,), T_star)
        assert abs(up_probability_slope(model)) < 1e-6
        assert thermal_fisher(model, 1, ANALYTIC) < 1e-10
        assert thermometry_report(model).xi > 1e4


def test_zero_derivative_requires_coupling():
    with pytest.raises(ValidationError):
        zero_derivative_curve([1.0], J=0.0)


# --- Markov order ----------------------------------------------------------------------------------


@pytest.mark.parametrize("B,J,T", [(0.5, 1.0, 1.0), (0.0, -1.0, 2.0), (1.5, 0.2, 0.7)])
def test_nearest_neighbour_order_is_one(B, J, T):
    model = SpinChainModel(B, (J,), T)
    assert verify_chain_markov_order(model) == 1
    assert factorization_defect(model) > 1e-6


def test_independent_spins_order_zero():
    assert verify_chain_markov_order(SpinChainModel(0.5, (0.0,), 1.0)) == 0


def test_nnn_order_measured():
    assert verify_chain_markov_order(SpinChainModel(1.0, (0.6, -0.4), 1.2)) == 2


# --- scans ---------------------------------------------------------------------------------------


def test_scan_rows_and_flags():
    points = ising_points([0.5, 1.0], [0.0, 1.0], J=1.0) + [(1e-3, 1.0, 1.0, 0.0)]
    rows = scan_maps(points)
    assert len(rows) == 5
    assert rows[0].xi_diverged
    assert rows[-1].flags == ("overflow_skipped",)
    assert list(report_row(rows[0])) == list(SCAN_COLUMNS)
    threaded = scan_maps(points, workers=3)
    assert [r.flags for r in rows] == [t.flags for t in threaded]
    assert [r.F12 for r in rows[:4]] == [t.F12 for t in threaded[:4]]


def test_alpha_zero_row_reduces_to_nearest_neighbour():
    for panel, jb in NNN_PANELS.items():
        (T, B, J, alpha), = nnn_points([1.3], [0.0], jb)
        nnn = scan_maps([(T, B, J, alpha)])[0]
        nn = thermometry_report(SpinChainModel(B, (J,), T))
        assert nnn.delta_F == pytest.approx(nn.delta_F, rel=1e-12, abs=1e-300)


def test_interacting_chain_factorization_guard():
    model = SpinChainModel(0.5, (1e-14,), 1.0)
    with pytest.raises(NumericError):
        verify_chain_markov_order(model)


def test_polarized_chain_keeps_order_one():
    # the pair covariance is ~1e-11 here, yet the conditionals clearly depend on the neighbour
    model = SpinChainModel(2.0, (1.0,), 0.5)
    assert factorization_defect(model) < 1e-9
    assert verify_chain_markov_order(model) == 1
