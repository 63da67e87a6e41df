"""Tests for the privacy calculator: amplification, cohort sizing, Renyi route, composition."""

import math

import numpy as np
import pytest

from fedstats.amplification import (
    AggregateBound,
    BoundNotApplicable,
    CohortSizeUnreachable,
    CompositionLedger,
    RenyiPoint,
    closed_form_epsilon,
    compose_advanced,
    compose_basic,
    max_admissible_eps0,
    min_cohort_size,
    rdp_to_dp,
    rho_2rr,
    rho_2rr_curve,
    symohe_epsilon,
    symohe_renyi_bound,
)
from fedstats.randomizers import PrivacyModel


def test_closed_form_zero_eps0_gives_zero():
    for n, delta in ((300, 1e-6), (1000, 1e-6), (100, 1e-2)):
        bound = closed_form_epsilon(0.0, n, delta)
        assert isinstance(bound, AggregateBound)
        assert bound.epsilon == 0.0


def test_closed_form_reference_points():
    # recomputed with 50-digit arithmetic before freezing
    assert closed_form_epsilon(3.0, 5000, 1e-6).epsilon == pytest.approx(0.8379832055, abs=1e-9)
    assert closed_form_epsilon(1.0, 10_000, 1e-6).epsilon == pytest.approx(0.1800063677, abs=1e-9)


def test_closed_form_validity_floor():
    bound = closed_form_epsilon(3.0, 1000, 1e-6)
    assert isinstance(bound, BoundNotApplicable)
    assert bound.max_admissible_eps0 == pytest.approx(2.0301916, abs=1e-6)
    # just inside the cap it applies
    assert closed_form_epsilon(2.03, 1000, 1e-6).applicable


def test_closed_form_monotone_in_n_and_eps0():
    eps_values = [closed_form_epsilon(1.0, n, 1e-6).epsilon for n in range(500, 20_000, 500)]
    assert all(a > b for a, b in zip(eps_values, eps_values[1:]))
    by_eps0 = [closed_form_epsilon(e, 50_000, 1e-6).epsilon for e in (0.5, 1.0, 2.0, 3.0, 4.0)]
    assert all(a < b for a, b in zip(by_eps0, by_eps0[1:]))


def test_deletion_equals_replacement_at_doubled_eps0():
    for eps0, n in ((0.75, 4000), (1.0, 20_000), (0.25, 1000)):
        rep = closed_form_epsilon(2 * eps0, n, 1e-6, PrivacyModel.REPLACEMENT)
        dele = closed_form_epsilon(eps0, n, 1e-6, PrivacyModel.DELETION)
        assert rep.applicable == dele.applicable
        if rep.applicable:
            assert rep.epsilon == dele.epsilon


def test_min_cohort_size_reference():
    m = min_cohort_size(3.0, 1.0, 1e-6)
    assert m == 2935
    assert 2900 <= m <= 3000
    assert closed_form_epsilon(3.0, m, 1e-6).epsilon <= 1.0
    assert closed_form_epsilon(3.0, m - 1, 1e-6).epsilon > 1.0


def test_min_cohort_size_zero_eps0_is_validity_floor():
    # eps = 0 everywhere the bound applies, so m is the domain-of-validity floor
    assert min_cohort_size(0.0, 0.5, 1e-6) == math.ceil(16 * math.log(2e6))


def test_min_cohort_size_target_at_eps0_still_uses_aggregate_bound():
    # target >= eps0: m is the smallest n satisfying the precondition when the
    # bound there is already below target (verified by scan)
    m = min_cohort_size(0.5, 0.5, 1e-6)
    assert m == 308
    assert not closed_form_epsilon(0.5, m - 1, 1e-6).applicable
    assert closed_form_epsilon(0.5, m, 1e-6).epsilon <= 0.5


def test_min_cohort_consistency_on_grid():
    for eps0, target in ((1.0, 0.2), (2.0, 0.5), (3.0, 1.5)):
        m = min_cohort_size(eps0, target, 1e-6)
        assert closed_form_epsilon(eps0, m, 1e-6).epsilon <= target
        prev = closed_form_epsilon(eps0, m - 1, 1e-6)
        assert (not prev.applicable) or prev.epsilon > target


def test_min_cohort_unreachable():
    with pytest.raises(CohortSizeUnreachable):
        min_cohort_size(8.0, 1e-6, 1e-6)


def test_rho_2rr_single_report_closed_form():
    # n=1, alpha=2, eps0=1: ln((e^2 + e^-1)/(1 + e))
    expected = math.log((math.e**2 + math.exp(-1)) / (1 + math.e))
    assert rho_2rr(1, 2.0, 1.0).rho == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.7353256641, abs=1e-9)


def test_rho_2rr_zero_eps0():
    for n in (1, 3, 10):
        for alpha in (1.5, 2.0, 8.0):
            assert rho_2rr(n, alpha, 0.0).rho == 0.0


def test_rho_2rr_monotone_small_grid():
    for eps0 in (0.5, 1.0):
        for alpha in (1.5, 2.0):
            rhos = [rho_2rr(n, alpha, eps0).rho for n in range(1, 30)]
            assert all(a >= b - 1e-12 for a, b in zip(rhos, rhos[1:]))
    # monotone in alpha at fixed n
    curve = rho_2rr_curve(10, (1.5, 2.0, 4.0, 8.0), 1.0)
    rhos = [pt.rho for pt in curve]
    assert all(a <= b + 1e-12 for a, b in zip(rhos, rhos[1:]))


def test_rho_2rr_matrix_path_matches_per_k_reference():
    # the vectorized scan must agree with a direct per-k computation
    from scipy.special import expit
    from scipy.stats import binom

    from fedstats.amplification import _renyi_divergence

    alphas = (1.5, 2.0, 8.0)
    for n in (1, 2, 7, 33):
        for eps0 in (0.5, 3.0):
            p = float(expit(eps0))
            q = 1.0 - p
            bern_p = np.array([1.0 - p, p])
            bern_q = np.array([1.0 - q, q])
            reference = [0.0] * len(alphas)
            for k in range(n):
                rest = np.convolve(
                    binom.pmf(np.arange(k + 1), k, p),
                    binom.pmf(np.arange(n - k), n - 1 - k, q),
                )
                dp = np.convolve(rest, bern_p)
                dq = np.convolve(rest, bern_q)
                for i, a in enumerate(alphas):
                    reference[i] = max(
                        reference[i],
                        _renyi_divergence(dp, dq, a),
                        _renyi_divergence(dq, dp, a),
                    )
            got = [pt.rho for pt in rho_2rr_curve(n, alphas, eps0)]
            assert np.allclose(reference, got, rtol=1e-12, atol=1e-12)


def test_rho_2rr_limits():
    with pytest.raises(ValueError):
        rho_2rr(0, 2.0, 1.0)
    with pytest.raises(ValueError):
        rho_2rr(100_001, 2.0, 1.0)
    with pytest.raises(ValueError):
        rho_2rr(5, 1.0, 1.0)


def test_symohe_bound_is_twice_rho():
    assert symohe_renyi_bound(1, 2.0, 1.0).rho == pytest.approx(1.4706513, abs=1e-6)
    assert symohe_renyi_bound(7, 3.0, 0.5).rho == pytest.approx(2 * rho_2rr(7, 3.0, 0.5).rho)
    assert symohe_renyi_bound(4, 2.0, 0.0).rho == 0.0


def test_rdp_to_dp():
    assert rdp_to_dp([RenyiPoint(2.0, 0.0)], 1e-6) == pytest.approx(math.log(1e6), abs=1e-9)
    assert rdp_to_dp([RenyiPoint(1e6, 0.5)], 0.5) == pytest.approx(0.5, abs=1e-5)
    two = [RenyiPoint(2.0, 0.1), RenyiPoint(4.0, 3.0)]
    assert rdp_to_dp(two, 1e-2) == min(0.1 + math.log(100), 3.0 + math.log(100) / 3)
    with pytest.raises(ValueError):
        rdp_to_dp([], 1e-6)
    with pytest.raises(ValueError):
        rdp_to_dp([RenyiPoint(2.0, 0.0)], 0.0)


def test_symohe_epsilon_bounded_and_finite():
    # converted epsilon never exceeds 2*eps0 + ln(1/delta)/(alpha_max - 1)
    for n in (10, 100):
        for eps0 in (0.5, 1.0, 3.0):
            eps = symohe_epsilon(n, eps0, 1e-6)
            assert math.isfinite(eps)
            assert eps <= 2 * eps0 + math.log(1e6) / (257.0 - 1.0) + 1e-9


def test_compose_basic():
    assert compose_basic([(0.3, 1e-6), (0.2, 1e-6)]) == (pytest.approx(0.5), pytest.approx(2e-6))
    assert compose_basic([]) == (0.0, 0.0)
    assert compose_basic([(0.7, 1e-5)]) == (0.7, 1e-5)
    ledger = CompositionLedger()
    ledger.append(0.1, 1e-7)
    ledger.append(0.2, 1e-7)
    assert compose_basic(ledger)[0] == pytest.approx(0.3)


def test_compose_advanced():
    # k=100, eps=0.1, delta=0, slack=1e-6 (recomputed with mpmath: 6.308231)
    eps_total, delta_total = compose_advanced(0.1, 0.0, 100, 1e-6)
    assert eps_total == pytest.approx(6.308231, abs=1e-5)
    assert delta_total == pytest.approx(1e-6)
    # eps=0 -> 0
    assert compose_advanced(0.0, 1e-7, 10, 1e-6)[0] == 0.0
    # k=1 at slack e^(-1/2): sqrt(2 ln(1/slack)) = 1, so exactly eps + eps*(e^eps - 1)
    eps_total, _ = compose_advanced(0.5, 0.0, 1, math.exp(-0.5))
    assert eps_total == pytest.approx(0.5 + 0.5 * math.expm1(0.5), abs=1e-12)
    with pytest.raises(ValueError):
        compose_advanced(0.1, 0.0, 2, 0.0)
    with pytest.raises(ValueError):
        compose_advanced(0.1, 0.0, 2, 1.0)


def test_max_admissible_eps0_deletion_halved():
    assert max_admissible_eps0(4000, 1e-6, PrivacyModel.DELETION) == pytest.approx(
        max_admissible_eps0(4000, 1e-6, PrivacyModel.REPLACEMENT) / 2.0
    )
