"""Tests for the local randomizers and their debiasing estimators."""

import math

import numpy as np
import pytest

from fedstats.randomizers import (
    Mode,
    PrivacyModel,
    debias_asymmetric,
    debias_symmetric,
    encode_one_hot,
    exact_privacy_ratio,
    randomize_asymmetric,
    randomize_batch,
    randomize_symmetric,
    two_rr,
    _noiseless_report,
)

LN3 = math.log(3.0)


def test_encode_one_hot_definition():
    assert encode_one_hot(0, 3).materialize().tolist() == [1, 0, 0]
    assert encode_one_hot(2, 3).materialize().tolist() == [0, 0, 1]


def test_encode_one_hot_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        encode_one_hot(5, 4)
    with pytest.raises(ValueError):
        encode_one_hot(-1, 4)


def test_domain_size_cap():
    with pytest.raises(ValueError, match="dense limit"):
        encode_one_hot(0, (1 << 20) + 1)


def test_zero_epsilon_rejected_by_randomizers():
    v = encode_one_hot(0, 2)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        randomize_asymmetric(v, 0.0, rng)
    with pytest.raises(ValueError):
        randomize_symmetric(v, 0.0, rng)


def test_fixed_seed_replay():
    v = encode_one_hot(3, 16)
    a = randomize_asymmetric(v, 1.0, np.random.default_rng(42)).bits
    b = randomize_asymmetric(v, 1.0, np.random.default_rng(42)).bits
    assert (a == b).all()
    a = randomize_symmetric(v, 1.0, np.random.default_rng(42)).bits
    b = randomize_symmetric(v, 1.0, np.random.default_rng(42)).bits
    assert (a == b).all()


def test_asymmetric_coordinate_law():
    # hot -> P(1)=1/2; cold -> P(1) = 1/(e^eps+1) = 1/4 at eps = ln 3
    rng = np.random.default_rng(1)
    trials = 200_000
    bits = randomize_batch(np.zeros(trials, dtype=int), 2, LN3, Mode.ASYMMETRIC, rng)
    hot_rate = bits[:, 0].mean()
    cold_rate = bits[:, 1].mean()
    assert abs(hot_rate - 0.5) < 4 * math.sqrt(0.25 / trials)
    assert abs(cold_rate - 0.25) < 4 * math.sqrt(0.25 * 0.75 / trials)


def test_symmetric_coordinate_law():
    # keep probability e^eps/(1+e^eps) = 3/4 at eps = ln 3
    rng = np.random.default_rng(2)
    trials = 200_000
    bits = randomize_batch(np.zeros(trials, dtype=int), 2, LN3, Mode.SYMMETRIC, rng)
    assert abs(bits[:, 0].mean() - 0.75) < 4 * math.sqrt(0.25 * 0.75 / trials)
    assert abs(bits[:, 1].mean() - 0.25) < 4 * math.sqrt(0.25 * 0.75 / trials)


def test_batch_matches_single_report_stream():
    # randomize_batch consumes the uniform stream exactly like repeated single calls
    idx = np.array([0, 3, 1, 2, 2])
    for mode, single in ((Mode.ASYMMETRIC, randomize_asymmetric), (Mode.SYMMETRIC, randomize_symmetric)):
        batch = randomize_batch(idx, 4, 0.7, mode, np.random.default_rng(9))
        rng = np.random.default_rng(9)
        singles = np.stack([single(encode_one_hot(i, 4), 0.7, rng).bits for i in idx])
        assert (batch == singles).all()


def test_debias_asymmetric_all_zero():
    # all-zero sums, n=100, e^eps=3 -> -2n/(e^eps - 1) = -100 everywhere.
    # (The offset must be 2n/(e^eps - 1) for unbiasedness: with all 100 clients
    # at one cell, E[sum there] = 100 * 1/2 and 4 * 50 - 100 = 100 = f.)
    hist = debias_asymmetric(np.zeros(4, dtype=int), 100, LN3)
    assert np.allclose(hist.estimates, -100.0)


def test_debias_symmetric_all_zero():
    # symmetric offset is n/(e^eps - 1): -50 at n=100, e^eps=3
    hist = debias_symmetric(np.zeros(4, dtype=int), 100, LN3)
    assert np.allclose(hist.estimates, -50.0)


def test_variance_model_coefficients():
    # asymmetric: Var = n * 4e^eps/(e^eps-1)^2 + f = 3n + f at e^eps = 3
    hist = debias_asymmetric(np.zeros(2, dtype=int), 1000, LN3)
    assert hist.noise_variance == pytest.approx(3 * 1000)
    assert hist.count_coefficient == 1.0
    assert hist.variance(200.0) == pytest.approx(3200.0)
    # symmetric: Var = n * e^eps/(e^eps-1)^2 = 0.75 n, independent of f
    hist = debias_symmetric(np.zeros(2, dtype=int), 1000, LN3)
    assert hist.noise_variance == pytest.approx(0.75 * 1000)
    assert hist.count_coefficient == 0.0
    assert hist.variance(200.0) == pytest.approx(750.0)


def test_debias_rejects_bad_sums():
    with pytest.raises(ValueError):
        debias_asymmetric(np.array([5, 0]), 4, 1.0)
    with pytest.raises(ValueError):
        debias_symmetric(np.array([-1, 0]), 4, 1.0)


@pytest.mark.parametrize("mode", [Mode.ASYMMETRIC, Mode.SYMMETRIC])
def test_unbiasedness_and_variance_monte_carlo(mode):
    # n=2000 clients, true count 200 at cell 0, e^eps0 = 3, 1000 trials
    n, true_count, trials = 2000, 200, 1000
    rng = np.random.default_rng(12345)
    idx = np.zeros(n, dtype=int)
    idx[true_count:] = 1
    estimates = np.empty(trials)
    for t in range(trials):
        bits = randomize_batch(idx, 2, LN3, mode, rng)
        sums = bits.sum(axis=0)
        if mode is Mode.ASYMMETRIC:
            hist = debias_asymmetric(sums, n, LN3)
        else:
            hist = debias_symmetric(sums, n, LN3)
        estimates[t] = hist.estimates[0]
    expected_var = 3 * n + true_count if mode is Mode.ASYMMETRIC else 0.75 * n
    se_mean = math.sqrt(expected_var / trials)
    assert abs(estimates.mean() - true_count) < 4 * se_mean
    assert abs(estimates.var(ddof=1) - expected_var) < 0.10 * expected_var


def test_round_trip_expectation_at_hot_cell():
    # debias(sum of randomized identical inputs) has expectation n at the hot cell
    n, trials = 500, 400
    rng = np.random.default_rng(77)
    idx = np.full(n, 2, dtype=int)
    means = []
    for _ in range(trials):
        bits = randomize_batch(idx, 4, 1.0, Mode.ASYMMETRIC, rng)
        means.append(debias_asymmetric(bits.sum(axis=0), n, 1.0).estimates[2])
    hist = debias_asymmetric(np.zeros(4, dtype=int), n, 1.0)
    se = math.sqrt(hist.variance(n) / trials)
    assert abs(np.mean(means) - n) < 4 * se


def test_two_rr_laws():
    rng = np.random.default_rng(5)
    trials = 100_000
    # eps0 = 0: fair coin regardless of input
    outs = np.array([two_rr(1, 0.0, rng) for _ in range(trials)])
    assert abs(outs.mean() - 0.5) < 4 * math.sqrt(0.25 / trials)
    # eps0 = ln 3, bit 1 -> P(1) = 3/4
    outs = np.array([two_rr(1, LN3, rng) for _ in range(20_000)])
    assert abs(outs.mean() - 0.75) < 4 * math.sqrt(0.25 * 0.75 / 20_000)
    # eps0 -> infinity: identity map
    assert all(two_rr(b, 1e6, rng) == b for b in (0, 1) for _ in range(100))


def test_two_rr_rejects_non_bit():
    with pytest.raises(ValueError):
        two_rr(2, 1.0, np.random.default_rng(0))


def test_exact_privacy_ratio_values():
    assert exact_privacy_ratio(Mode.ASYMMETRIC, 1.0) == pytest.approx(1.0)
    assert exact_privacy_ratio(Mode.SYMMETRIC, 1.0, PrivacyModel.DELETION) == pytest.approx(1.0)
    assert exact_privacy_ratio(Mode.SYMMETRIC, 1.0, PrivacyModel.REPLACEMENT) == pytest.approx(2.0)


@pytest.mark.parametrize("eps0", [0.1, 1.0, 3.0, 8.0])
def test_asymmetric_single_coordinate_ratios_within_bounds(eps0):
    # Every per-coordinate PMF ratio between two inputs lies in [e^-eps, e^eps],
    # enumerated from the Bernoulli laws rather than sampled.
    half, cold = 0.5, 1.0 / (math.exp(eps0) + 1.0)

    def mass(p, b):
        return p if b else 1.0 - p

    for b in (0, 1):
        for p_num, p_den in ((half, cold), (cold, half), (cold, cold)):
            ratio = mass(p_num, b) / mass(p_den, b)
            assert math.exp(-eps0) - 1e-12 <= ratio <= math.exp(eps0) + 1e-12
    assert exact_privacy_ratio(Mode.ASYMMETRIC, eps0) <= eps0 + 1e-12


def test_noiseless_bypass_symmetric_identity():
    v = encode_one_hot(1, 3)
    rep = _noiseless_report(v, Mode.SYMMETRIC, np.random.default_rng(0))
    assert rep.bits.tolist() == [0, 1, 0]
