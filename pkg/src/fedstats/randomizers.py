"""Local randomizers for private one-hot histogram reports, plus server-side debiasing.

Two per-coordinate randomized-response variants over a one-hot encoding:

* asymmetric: the hot coordinate is reported with a fair coin, every cold
  coordinate turns on with probability 1/(e^eps0 + 1).  This is eps0-DP in the
  replacement model.
* symmetric: every coordinate is kept with probability e^eps0/(1 + e^eps0) and
  flipped otherwise.  This is eps0-DP in the deletion model (2*eps0 replacement).

The matching debiasing estimators turn summed reports into unbiased per-cell
count estimates with closed-form variances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

# Dense bit vectors only; compressed encodings are out of scope.
MAX_DOMAIN_SIZE = 1 << 20


class Mode(str, Enum):
    ASYMMETRIC = "asymmetric"
    SYMMETRIC = "symmetric"


class PrivacyModel(str, Enum):
    REPLACEMENT = "replacement"
    DELETION = "deletion"


@dataclass(frozen=True)
class LocalEpsilon:
    """Local privacy-loss parameter in nats."""

    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"local epsilon must be finite and >= 0, got {self.value}")


def as_epsilon(eps0: float | LocalEpsilon) -> LocalEpsilon:
    return eps0 if isinstance(eps0, LocalEpsilon) else LocalEpsilon(float(eps0))


def _require_positive(eps0: LocalEpsilon) -> float:
    if eps0.value <= 0:
        raise ValueError("randomizer requires eps0 > 0")
    return eps0.value


@dataclass(frozen=True)
class OneHotVector:
    """A categorical value as a unit vector over [0, domain_size)."""

    domain_size: int
    hot_index: int

    def __post_init__(self) -> None:
        if self.domain_size < 1:
            raise ValueError(f"domain_size must be positive, got {self.domain_size}")
        if self.domain_size > MAX_DOMAIN_SIZE:
            raise ValueError(
                f"domain_size {self.domain_size} exceeds dense limit {MAX_DOMAIN_SIZE}"
            )
        if not 0 <= self.hot_index < self.domain_size:
            raise ValueError(
                f"hot_index {self.hot_index} out of range [0, {self.domain_size})"
            )

    def materialize(self) -> np.ndarray:
        bits = np.zeros(self.domain_size, dtype=np.uint8)
        bits[self.hot_index] = 1
        return bits


@dataclass(frozen=True)
class PrivatizedReport:
    """Bit vector after local randomization."""

    bits: np.ndarray
    mode: Mode
    epsilon0: LocalEpsilon

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("report bits must be a 1-d vector")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("report bits must be 0/1")
        object.__setattr__(self, "bits", bits)

    @property
    def domain_size(self) -> int:
        return int(self.bits.shape[0])


@dataclass(frozen=True)
class DebiasedHistogram:
    """Unbiased per-cell count estimates with their variance model.

    Per-cell variance is ``noise_variance + count_coefficient * f(d)`` where
    f(d) is the true count of the cell.
    """

    estimates: np.ndarray
    n: int
    epsilon0: LocalEpsilon
    mode: Mode
    noise_variance: float
    count_coefficient: float

    def variance(self, true_count: float) -> float:
        return self.noise_variance + self.count_coefficient * true_count

    @property
    def domain_size(self) -> int:
        return int(self.estimates.shape[0])


def encode_one_hot(hot_index: int, domain_size: int) -> OneHotVector:
    """Build the one-hot vector with 1 exactly at hot_index."""
    return OneHotVector(domain_size=domain_size, hot_index=hot_index)


def _asymmetric_probs(hot: np.ndarray, eps: float) -> np.ndarray:
    # hot coordinate ~ Bernoulli(1/2); cold ~ Bernoulli(1/(e^eps + 1)) = expit(-eps)
    return np.where(hot, 0.5, expit(-eps))


def randomize_asymmetric(
    v: OneHotVector, eps0: float | LocalEpsilon, rng: np.random.Generator
) -> PrivatizedReport:
    """Asymmetric private one-hot encoding of a single value."""
    eps = _require_positive(as_epsilon(eps0))
    hot = v.materialize().astype(bool)
    bits = (rng.random(v.domain_size) < _asymmetric_probs(hot, eps)).astype(np.uint8)
    return PrivatizedReport(bits=bits, mode=Mode.ASYMMETRIC, epsilon0=as_epsilon(eps0))


def randomize_symmetric(
    v: OneHotVector, eps0: float | LocalEpsilon, rng: np.random.Generator
) -> PrivatizedReport:
    """Symmetric private one-hot encoding: keep each coordinate w.p. e^eps/(1+e^eps)."""
    eps = _require_positive(as_epsilon(eps0))
    bits = v.materialize()
    flip = rng.random(v.domain_size) < expit(-eps)
    bits = np.where(flip, 1 - bits, bits).astype(np.uint8)
    return PrivatizedReport(bits=bits, mode=Mode.SYMMETRIC, epsilon0=as_epsilon(eps0))


def randomize(
    v: OneHotVector, eps0: float | LocalEpsilon, mode: Mode, rng: np.random.Generator
) -> PrivatizedReport:
    if mode is Mode.ASYMMETRIC:
        return randomize_asymmetric(v, eps0, rng)
    return randomize_symmetric(v, eps0, rng)


def randomize_batch(
    hot_indices: np.ndarray,
    domain_size: int,
    eps0: float | LocalEpsilon,
    mode: Mode,
    rng: np.random.Generator,
) -> np.ndarray:
    """Randomize many one-hot reports at once; returns an (n, domain_size) 0/1 matrix.

    Row i follows exactly the per-coordinate law of the single-report
    randomizer for hot index hot_indices[i].
    """
    eps = _require_positive(as_epsilon(eps0))
    if domain_size < 1 or domain_size > MAX_DOMAIN_SIZE:
        raise ValueError(f"domain_size {domain_size} out of supported range")
    idx = np.asarray(hot_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= domain_size):
        raise ValueError("hot index out of range")
    n = idx.shape[0]
    hot = np.zeros((n, domain_size), dtype=bool)
    hot[np.arange(n), idx] = True
    u = rng.random((n, domain_size))
    if mode is Mode.ASYMMETRIC:
        bits = u < np.where(hot, 0.5, expit(-eps))
    else:
        flip = u < expit(-eps)
        bits = hot ^ flip
    return bits.astype(np.uint8)


def _scales(mode: Mode, eps: float) -> tuple[float, float]:
    # scale and per-report offset of the affine debiasing map, written in
    # exp(-eps) so the factors stay finite for very large eps.  The asymmetric
    # offset is 2n/(e^eps - 1): E[sum] = n/(e^eps+1) + (e^eps-1)/(2(e^eps+1)) f,
    # so anything smaller would leave the estimator biased.
    t = math.exp(-eps)
    if mode is Mode.ASYMMETRIC:
        scale = 2.0 * (1.0 + t) / (1.0 - t)
        offset = 2.0 * t / (1.0 - t)
    else:
        scale = (1.0 + t) / (1.0 - t)
        offset = t / (1.0 - t)
    return scale, offset


def _noise_variance(mode: Mode, eps: float, n: int) -> float:
    t = math.exp(-eps)
    if mode is Mode.ASYMMETRIC:
        return n * 4.0 * t / (1.0 - t) ** 2
    return n * t / (1.0 - t) ** 2


def _debias(sum_bits: np.ndarray, n: int, eps0: LocalEpsilon, mode: Mode) -> DebiasedHistogram:
    eps = _require_positive(eps0)
    sums = np.asarray(sum_bits, dtype=np.float64)
    if sums.ndim != 1:
        raise ValueError("sum_bits must be a 1-d vector")
    if n < 0:
        raise ValueError("cohort size must be >= 0")
    if sums.size and (sums.min() < 0 or sums.max() > n):
        raise ValueError("sum_bits entries must lie in [0, n]")
    scale, offset = _scales(mode, eps)
    estimates = scale * sums - n * offset
    return DebiasedHistogram(
        estimates=estimates,
        n=n,
        epsilon0=eps0,
        mode=mode,
        noise_variance=_noise_variance(mode, eps, n),
        count_coefficient=1.0 if mode is Mode.ASYMMETRIC else 0.0,
    )


def debias_asymmetric(
    sum_bits: np.ndarray, n: int, eps0: float | LocalEpsilon
) -> DebiasedHistogram:
    """Debias summed asymmetric reports: 2(1+e^e)/(e^e-1) * sum - 2n/(e^e-1)."""
    return _debias(sum_bits, n, as_epsilon(eps0), Mode.ASYMMETRIC)


def debias_symmetric(
    sum_bits: np.ndarray, n: int, eps0: float | LocalEpsilon
) -> DebiasedHistogram:
    """Debias summed symmetric reports: (1+e^e)/(e^e-1) * sum - n/(e^e-1)."""
    return _debias(sum_bits, n, as_epsilon(eps0), Mode.SYMMETRIC)


def debias(sum_bits: np.ndarray, n: int, eps0: float | LocalEpsilon, mode: Mode) -> DebiasedHistogram:
    return _debias(sum_bits, n, as_epsilon(eps0), mode)


def two_rr(bit: int, eps0: float | LocalEpsilon, rng: np.random.Generator) -> int:
    """Binary randomized response: return bit w.p. e^eps0/(e^eps0+1), else 1-bit."""
    e = as_epsilon(eps0).value
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit}")
    keep = rng.random() < expit(e)
    return bit if keep else 1 - bit


def exact_privacy_ratio(
    mode: Mode, eps0: float | LocalEpsilon, model: PrivacyModel = PrivacyModel.REPLACEMENT
) -> float:
    """Worst-case |log likelihood ratio| of a randomizer, computed from its Bernoulli laws.

    Enumerates the output bits of the (at most two) coordinates whose laws
    differ between the input pair (replacement) or between the input and the
    reference distribution (deletion), and maximizes the exact log ratio.
    """
    eps = _require_positive(as_epsilon(eps0))
    keep = expit(eps)  # e^eps/(1+e^eps)
    cold = expit(-eps)  # 1/(1+e^eps)

    def bern(p: float, b: int) -> float:
        return p if b == 1 else 1.0 - p

    if mode is Mode.ASYMMETRIC:
        if model is not PrivacyModel.REPLACEMENT:
            raise ValueError("the asymmetric randomizer is analyzed in the replacement model")
        # Inputs d, d' differ at coordinates d and d'; the hot law is Bern(1/2),
        # the cold law Bern(cold).  All other coordinates cancel.
        worst = 0.0
        for b1 in (0, 1):
            for b2 in (0, 1):
                num = bern(0.5, b1) * bern(cold, b2)
                den = bern(cold, b1) * bern(0.5, b2)
                worst = max(worst, abs(math.log(num / den)))
        return worst

    if model is PrivacyModel.DELETION:
        # Against the reference distribution only the hot coordinate differs:
        # Bern(keep) vs Bern(1-keep).
        worst = 0.0
        for b in (0, 1):
            worst = max(worst, abs(math.log(bern(keep, b) / bern(1.0 - keep, b))))
        return worst

    # Replacement: the two differing coordinates each swap Bern(keep) <-> Bern(cold).
    worst = 0.0
    for b1 in (0, 1):
        for b2 in (0, 1):
            num = bern(keep, b1) * bern(cold, b2)
            den = bern(cold, b1) * bern(keep, b2)
            worst = max(worst, abs(math.log(num / den)))
    return worst


def _noiseless_report(
    v: OneHotVector, mode: Mode, rng: np.random.Generator
) -> PrivatizedReport:
    """Test-only bypass: the eps0 -> infinity limit of each randomizer's law.

    Symmetric reports become the identity; asymmetric keeps the fair coin on
    the hot coordinate.  Not part of the public surface.
    """
    bits = v.materialize()
    if mode is Mode.ASYMMETRIC and rng.random() < 0.5:
        bits[v.hot_index] = 0
    return PrivatizedReport(bits=bits, mode=mode, epsilon0=LocalEpsilon(float(np.finfo(np.float64).max)))
