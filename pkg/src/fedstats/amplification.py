"""Privacy calculator for aggregated local reports.

Covers the closed-form amplification-by-aggregation bound, minimum cohort
sizing, the exact Renyi-divergence route for summed binary randomized response
(and the symmetric one-hot bound built on it), RDP-to-(eps, delta) conversion,
and basic/advanced composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit, logsumexp
from scipy.stats import binom

from .randomizers import LocalEpsilon, Mode, PrivacyModel, as_epsilon

MAX_COHORT = 2**31
MAX_EXACT_RENYI_N = 100_000
# the exact scan is O(n^2) per alpha; past this it stops being interactive
MAX_RENYI_CERTIFY_N = 2000

# Alpha grid for RDP conversion: dense near 1 for the small-eps regime plus a
# coarse tail for large eps.
DEFAULT_ALPHA_GRID: tuple[float, ...] = tuple(
    sorted({1.0 + 2.0**j / 16.0 for j in range(13)} | {16.0, 32.0, 64.0})
)


class CohortSizeUnreachable(ValueError):
    """No cohort size up to 2^31 certifies the requested target."""


@dataclass(frozen=True)
class AggregateBound:
    """A certified (epsilon, delta) guarantee for the aggregate of n local reports."""

    epsilon: float
    delta: float
    n: int
    epsilon0: LocalEpsilon
    model: PrivacyModel

    def __post_init__(self) -> None:
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.n < 1:
            raise ValueError(f"cohort size must be >= 1, got {self.n}")

    @property
    def applicable(self) -> bool:
        return True


@dataclass(frozen=True)
class BoundNotApplicable:
    """The closed form's precondition fails; carries the largest admissible eps0."""

    max_admissible_eps0: float
    n: int
    delta: float
    epsilon0: LocalEpsilon
    model: PrivacyModel

    @property
    def applicable(self) -> bool:
        return False


@dataclass(frozen=True)
class RenyiPoint:
    alpha: float
    rho: float

    def __post_init__(self) -> None:
        if self.alpha <= 1.0:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")


@dataclass
class CompositionLedger:
    """Per-round (epsilon, delta) charges of one analysis."""

    entries: list[tuple[float, float]] = field(default_factory=list)

    def append(self, epsilon: float, delta: float) -> None:
        if epsilon < 0 or not 0.0 <= delta <= 1.0:
            raise ValueError(f"invalid ledger entry ({epsilon}, {delta})")
        self.entries.append((float(epsilon), float(delta)))

    def __len__(self) -> int:
        return len(self.entries)


def _effective_eps0(eps0: float, model: PrivacyModel) -> float:
    # A deletion-model randomizer is 2*eps0-DP in the replacement model, which
    # is what the closed form is stated for.
    return 2.0 * eps0 if model is PrivacyModel.DELETION else eps0


def max_admissible_eps0(n: int, delta: float, model: PrivacyModel = PrivacyModel.REPLACEMENT) -> float:
    """Largest eps0 for which the closed-form bound applies at (n, delta)."""
    arg = n / (8.0 * math.log(2.0 / delta)) - 1.0
    if arg <= 0:
        return -math.inf
    cap = math.log(arg)
    return cap / 2.0 if model is PrivacyModel.DELETION else cap


def closed_form_epsilon(
    eps0: float | LocalEpsilon,
    n: int,
    delta: float,
    model: PrivacyModel = PrivacyModel.REPLACEMENT,
) -> AggregateBound | BoundNotApplicable:
    """Closed-form aggregate epsilon for n reports of an eps0-DP local randomizer.

    eps = ln(1 + (e^e0 - 1) * (4*sqrt(2*ln(4/delta)) / sqrt((e^e0 + 1)*n) + 4/n))
    valid when e0 <= ln(n / (8*ln(2/delta)) - 1), with e0 doubled first in the
    deletion model.
    """
    e0 = as_epsilon(eps0)
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if n < 1:
        raise ValueError(f"cohort size must be >= 1, got {n}")
    eff = _effective_eps0(e0.value, model)
    cap = max_admissible_eps0(n, delta, model)
    if e0.value > cap:
        return BoundNotApplicable(
            max_admissible_eps0=cap, n=n, delta=delta, epsilon0=e0, model=model
        )
    ee = math.exp(eff)
    eps = math.log1p(
        (ee - 1.0) * (4.0 * math.sqrt(2.0 * math.log(4.0 / delta)) / math.sqrt((ee + 1.0) * n) + 4.0 / n)
    )
    return AggregateBound(epsilon=eps, delta=delta, n=n, epsilon0=e0, model=model)


def min_cohort_size(
    eps0: float | LocalEpsilon,
    target_epsilon: float,
    delta: float,
    model: PrivacyModel = PrivacyModel.REPLACEMENT,
) -> int:
    """Smallest cohort size at which the closed form applies and meets the target.

    Valid to binary search because the bound is strictly decreasing in n on its
    validity domain.
    """
    e0 = as_epsilon(eps0)
    if target_epsilon <= 0:
        raise ValueError(f"target epsilon must be > 0, got {target_epsilon}")
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    eff = _effective_eps0(e0.value, model)
    floor = max(1, math.ceil(8.0 * math.log(2.0 / delta) * (math.exp(eff) + 1.0)))
    while floor <= MAX_COHORT and not closed_form_epsilon(e0, floor, delta, model).applicable:
        floor += 1  # float roundoff in the ceil; at most a step or two

    def meets(n: int) -> bool:
        bound = closed_form_epsilon(e0, n, delta, model)
        return bound.applicable and bound.epsilon <= target_epsilon

    if floor > MAX_COHORT:
        raise CohortSizeUnreachable(
            f"no admissible cohort size <= {MAX_COHORT} for eps0={e0.value}, delta={delta}"
        )
    if meets(floor):
        return floor
    if not meets(MAX_COHORT):
        raise CohortSizeUnreachable(
            f"target epsilon {target_epsilon} unreachable within n <= {MAX_COHORT}"
        )
    lo, hi = floor, MAX_COHORT  # lo fails, hi meets
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if meets(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _renyi_divergence(p_pmf: np.ndarray, q_pmf: np.ndarray, alpha: float) -> float:
    """Exact order-alpha Renyi divergence between two finite PMFs."""
    p = np.asarray(p_pmf, dtype=np.float64)
    q = np.asarray(q_pmf, dtype=np.float64)
    valid = (p > 0.0) & (q > 0.0)
    if np.any((p > 0.0) & ~valid):
        # Mass where q underflowed; the pointwise ratio of these mixtures is
        # bounded, so the dropped contribution is below float precision.
        if p[(p > 0.0) & ~valid].sum() > 1e-12:
            raise ArithmeticError("PMF support mismatch beyond underflow tolerance")
    with np.errstate(divide="ignore"):
        terms = alpha * np.log(p[valid]) + (1.0 - alpha) * np.log(q[valid])
    return max(0.0, float(logsumexp(terms)) / (alpha - 1.0))


@lru_cache(maxsize=4096)
def _binom_row(k: int, p: float) -> np.ndarray:
    out = binom.pmf(np.arange(k + 1), k, p)
    out.setflags(write=False)
    return out


# past this the (n x n) matrix route costs too much memory; fall back to per-k
_MATRIX_RENYI_N = 4096


def rho_2rr_curve(
    n: int, alphas: tuple[float, ...], eps0: float | LocalEpsilon
) -> list[RenyiPoint]:
    """Exact worst-case Renyi divergences of summed binary randomized response.

    Scans the number k of ones among the other n-1 users, builds the exact PMF
    of Binomial(k, p) + Binomial(n-1-k, q) convolved with the differing user's
    Bernoulli, and maximizes the divergence over k and both orderings.  The
    per-k PMF work is shared across all requested alpha orders.
    """
    e0 = as_epsilon(eps0)
    if n < 1:
        raise ValueError(f"cohort size must be >= 1, got {n}")
    if n > MAX_EXACT_RENYI_N:
        raise ValueError(f"exact convolution limited to n <= {MAX_EXACT_RENYI_N}, got {n}")
    if any(a <= 1.0 for a in alphas):
        raise ValueError("alpha must be > 1")
    if e0.value == 0.0:
        return [RenyiPoint(alpha=a, rho=0.0) for a in alphas]
    p = float(expit(e0.value))
    q = 1.0 - p
    if q == 0.0:
        raise ValueError(
            f"eps0={e0.value} saturates the keep probability in float64; "
            "the exact computation would be meaningless"
        )
    if n <= _MATRIX_RENYI_N:
        return _rho_2rr_matrix(n, alphas, p, q)
    bern_p = np.array([1.0 - p, p])
    bern_q = np.array([1.0 - q, q])
    worst = [0.0] * len(alphas)
    for k in range(n):
        rest = np.convolve(
            binom.pmf(np.arange(k + 1), k, p),
            binom.pmf(np.arange(n - k), n - 1 - k, q),
        )
        dist_p = np.convolve(rest, bern_p)
        dist_q = np.convolve(rest, bern_q)
        for i, alpha in enumerate(alphas):
            worst[i] = max(
                worst[i],
                _renyi_divergence(dist_p, dist_q, alpha),
                _renyi_divergence(dist_q, dist_p, alpha),
            )
    return [RenyiPoint(alpha=a, rho=r) for a, r in zip(alphas, worst)]


def _rho_2rr_matrix(n: int, alphas: tuple[float, ...], p: float, q: float) -> list[RenyiPoint]:
    """Same exact scan with all k rows stacked so the alpha sweep vectorizes."""
    rest = np.zeros((n, n))
    for k in range(n):
        rest[k, :] = np.convolve(_binom_row(k, p), _binom_row(n - 1 - k, q))
    dist_p = np.zeros((n, n + 1))
    dist_q = np.zeros((n, n + 1))
    dist_p[:, :-1] += rest * (1.0 - p)
    dist_p[:, 1:] += rest * p
    dist_q[:, :-1] += rest * (1.0 - q)
    dist_q[:, 1:] += rest * q
    valid = (dist_p > 0.0) & (dist_q > 0.0)
    dropped = np.where((dist_p > 0.0) & ~valid, dist_p, 0.0).sum(axis=1)
    dropped += np.where((dist_q > 0.0) & ~valid, dist_q, 0.0).sum(axis=1)
    if dropped.max(initial=0.0) > 1e-12:
        raise ArithmeticError("PMF support mismatch beyond underflow tolerance")
    with np.errstate(divide="ignore"):
        log_p = np.where(valid, np.log(np.where(valid, dist_p, 1.0)), -np.inf)
        log_q = np.where(valid, np.log(np.where(valid, dist_q, 1.0)), -np.inf)
    points = []
    for alpha in alphas:
        t_pq = np.where(valid, alpha * log_p + (1.0 - alpha) * log_q, -np.inf)
        t_qp = np.where(valid, alpha * log_q + (1.0 - alpha) * log_p, -np.inf)
        worst = max(
            float(logsumexp(t_pq, axis=1).max()), float(logsumexp(t_qp, axis=1).max())
        ) / (alpha - 1.0)
        points.append(RenyiPoint(alpha=alpha, rho=max(0.0, worst)))
    return points


def rho_2rr(n: int, alpha: float, eps0: float | LocalEpsilon) -> RenyiPoint:
    """Exact worst-case order-alpha Renyi divergence of summed binary randomized response."""
    return rho_2rr_curve(n, (alpha,), eps0)[0]


def symohe_renyi_bound(n: int, alpha: float, eps0: float | LocalEpsilon) -> RenyiPoint:
    """Renyi bound for aggregated symmetric one-hot reports: twice the 2RR bound."""
    point = rho_2rr(n, alpha, eps0)
    return RenyiPoint(alpha=alpha, rho=2.0 * point.rho)


def rdp_to_dp(curve: list[RenyiPoint], delta: float) -> float:
    """Convert an RDP curve to an (epsilon, delta) guarantee: min over alpha."""
    if not curve:
        raise ValueError("RDP curve must be nonempty")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return min(pt.rho + math.log(1.0 / delta) / (pt.alpha - 1.0) for pt in curve)


def symohe_epsilon(
    n: int,
    eps0: float | LocalEpsilon,
    delta: float,
    alphas: tuple[float, ...] = DEFAULT_ALPHA_GRID,
) -> float:
    """Aggregate epsilon for symmetric one-hot reports via the Renyi route."""
    curve = [
        RenyiPoint(alpha=pt.alpha, rho=2.0 * pt.rho)
        for pt in rho_2rr_curve(n, alphas, eps0)
    ]
    return rdp_to_dp(curve, delta)


def certified_epsilon(
    eps0: float | LocalEpsilon, n: int, delta: float, mode: Mode
) -> float | None:
    """Best aggregate epsilon this module can certify for n reports of a randomizer.

    Asymmetric reports use the closed form in the replacement model; symmetric
    reports take the better of the closed form at the deletion-to-replacement
    conversion and the exact Renyi route (the latter only at sizes where the
    exact scan stays fast).  None when nothing certifies.
    """
    e0 = as_epsilon(eps0)
    if e0.value == 0.0:
        return 0.0
    candidates: list[float] = []
    model = PrivacyModel.DELETION if mode is Mode.SYMMETRIC else PrivacyModel.REPLACEMENT
    bound = closed_form_epsilon(e0, n, delta, model)
    if bound.applicable:
        candidates.append(bound.epsilon)
    if mode is Mode.SYMMETRIC and n <= MAX_RENYI_CERTIFY_N and float(expit(e0.value)) < 1.0:
        candidates.append(symohe_epsilon(n, e0, delta))
    return min(candidates) if candidates else None


def compose_basic(ledger: CompositionLedger | list[tuple[float, float]]) -> tuple[float, float]:
    """Coordinatewise sums of (epsilon, delta), compensated for long ledgers."""
    entries = ledger.entries if isinstance(ledger, CompositionLedger) else list(ledger)
    return (
        math.fsum(e for e, _ in entries),
        math.fsum(d for _, d in entries),
    )


def compose_advanced(
    per_round_epsilon: float,
    per_round_delta: float,
    k: int,
    delta_slack: float,
) -> tuple[float, float]:
    """Advanced composition of k rounds of an (eps, delta)-DP mechanism."""
    if not 0.0 < delta_slack < 1.0:
        raise ValueError(f"delta slack must be in (0, 1), got {delta_slack}")
    if k < 0:
        raise ValueError(f"round count must be >= 0, got {k}")
    if per_round_epsilon < 0 or not 0.0 <= per_round_delta <= 1.0:
        raise ValueError("invalid per-round privacy parameters")
    eps = per_round_epsilon
    eps_total = math.sqrt(2.0 * k * math.log(1.0 / delta_slack)) * eps + k * eps * math.expm1(eps)
    delta_total = k * per_round_delta + delta_slack
    return eps_total, delta_total
