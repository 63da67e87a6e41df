"""Server-side orchestration: deploy recipes, aggregate, debias, discover.

A round deploys one recipe to the fleet, drives both aggregation windows,
publishes if the cohort gate allows, debiases with the fleet's randomizer
mode, and attaches per-cell standard errors plus the aggregate bound actually
certified at the observed cohort size.  Discovery iterates rounds over n-gram
length: frequent bins become the next round's prefix-tree leaves, end-token
bins surface as completed phrases, and the composition ledger stays within
the analysis plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import BatchWindow, Gated, publish
from .amplification import (
    AggregateBound,
    CompositionLedger,
    certified_epsilon,
    compose_basic,
)
from .device import CollectStats
from .randomizers import DebiasedHistogram, Mode, PrivacyModel, debias
from .recipe import (
    Budgets,
    EncodingSpec,
    PrefixTree,
    PrefixTreeRule,
    Query,
    Recipe,
    verify_query_class,
)


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class GatedRound:
    """A round whose aggregate never crossed the cohort gate; carries no payload."""

    recipe_id: str
    min_cohort: int

    @property
    def gated(self) -> bool:
        return True

    def to_doc(self) -> dict:
        return {"recipe_id": self.recipe_id, "gated": True, "min_cohort": self.min_cohort}


@dataclass
class RoundResult:
    recipe: Recipe
    cohort_size: int
    histogram: DebiasedHistogram
    stderr: np.ndarray
    labels: list[str]
    aggregate_bound: AggregateBound | None
    charged: tuple[float, float]
    stats: CollectStats

    @property
    def gated(self) -> bool:
        return False

    @property
    def recipe_id(self) -> str:
        return self.recipe.recipe_id

    @property
    def estimates(self) -> np.ndarray:
        return self.histogram.estimates

    def to_doc(self) -> dict:
        bound = None
        if self.aggregate_bound is not None:
            bound = {
                "epsilon": self.aggregate_bound.epsilon,
                "delta": self.aggregate_bound.delta,
                "n": self.aggregate_bound.n,
                "model": self.aggregate_bound.model.value,
            }
        return {
            "recipe_id": self.recipe_id,
            "gated": False,
            "cohort_size": self.cohort_size,
            "labels": list(self.labels),
            "estimates": [float(x) for x in self.estimates],
            "stderr": [float(x) for x in self.stderr],
            "certified_bound": bound,
            "charged": {"epsilon": self.charged[0], "delta": self.charged[1]},
            "mode": self.histogram.mode.value,
            "random_reports": self.stats.random_reports,
        }

    def to_csv_rows(self) -> list[tuple[str, float, float]]:
        return [
            (label, float(est), float(se))
            for label, est, se in zip(self.labels, self.estimates, self.stderr)
        ]


def run_round(
    recipe: Recipe,
    fleet,
    trust_config,
    *,
    ledger: CompositionLedger | None = None,
    now: float = 0.0,
) -> RoundResult | GatedRound:
    """Deploy one recipe, close the window, and publish or gate."""
    verdict = verify_query_class(recipe, trust_config)
    if not verdict.approved:
        raise EngineError(f"engine-side verification failed: {verdict.reason}")
    mode: Mode = fleet.mode
    window_a = BatchWindow(
        recipe_id=recipe.recipe_id,
        min_cohort=recipe.budgets.min_cohort,
        domain_size=recipe.total_bins,
        server_slot="A",
    )
    window_b = BatchWindow(
        recipe_id=recipe.recipe_id,
        min_cohort=recipe.budgets.min_cohort,
        domain_size=recipe.total_bins,
        server_slot="B",
    )
    stats = fleet.collect(recipe, window_a, window_b, now)
    effective_m = max(recipe.budgets.min_cohort, stats.max_min_cohort)
    window_a.min_cohort = effective_m
    window_b.min_cohort = effective_m

    outcome = publish(window_a, window_b)
    if isinstance(outcome, Gated):
        return GatedRound(recipe_id=recipe.recipe_id, min_cohort=effective_m)

    histogram = debias(outcome.counts, outcome.cohort_size, recipe.budgets.local_epsilon, mode)
    stderr = np.sqrt(
        histogram.noise_variance
        + histogram.count_coefficient * np.maximum(histogram.estimates, 0.0)
    )
    cert = certified_epsilon(
        recipe.budgets.local_epsilon, outcome.cohort_size, recipe.budgets.delta, mode
    )
    bound = None
    if cert is not None:
        bound = AggregateBound(
            epsilon=cert,
            delta=recipe.budgets.delta,
            n=outcome.cohort_size,
            epsilon0=histogram.epsilon0,
            model=PrivacyModel.DELETION if mode is Mode.SYMMETRIC else PrivacyModel.REPLACEMENT,
        )
    if ledger is not None:
        ledger.append(recipe.budgets.aggregate_epsilon, recipe.budgets.delta)
    return RoundResult(
        recipe=recipe,
        cohort_size=outcome.cohort_size,
        histogram=histogram,
        stderr=stderr,
        labels=recipe.data_content_type.bin_labels(),
        aggregate_bound=bound,
        charged=(recipe.budgets.aggregate_epsilon, recipe.budgets.delta),
        stats=stats,
    )


@dataclass(frozen=True)
class FrequentSelection:
    """Bins whose estimate clears tau standard errors, classified for extension."""

    bins: tuple[int, ...]
    extendable: tuple[tuple[tuple[str, ...], str, float], ...]  # (prefix, next word, estimate)
    terminal: tuple[tuple[tuple[str, ...], float], ...]  # (prefix, estimate)


def _tree_rule(recipe: Recipe) -> PrefixTreeRule:
    rules = [f for f in recipe.data_content_type.features if isinstance(f, PrefixTreeRule)]
    if len(rules) != 1 or len(recipe.data_content_type.features) != 1:
        raise EngineError("discovery expects a single prefix-tree feature per recipe")
    return rules[0]


def select_frequent(result: RoundResult, tau: float) -> FrequentSelection:
    """Threshold rule: keep bins with estimate >= tau * stderr.

    OOV bins are never extended; end-token bins surface as terminal phrases.
    """
    rule = _tree_rule(result.recipe)
    selected = [
        i
        for i in range(result.estimates.shape[0])
        if result.estimates[i] >= tau * result.stderr[i]
    ]
    extendable = []
    terminal = []
    for i in selected:
        parts = rule.vocab_bin_parts(i)
        if parts is not None:
            prefix, word = parts
            extendable.append((prefix, word, float(result.estimates[i])))
        elif rule.is_end_token_bin(i):
            leaf_idx = (i - 1) // rule.bins_per_leaf
            terminal.append((rule.tree.leaves[leaf_idx], float(result.estimates[i])))
    return FrequentSelection(
        bins=tuple(selected), extendable=tuple(extendable), terminal=tuple(terminal)
    )


@dataclass(frozen=True)
class DiscoveryPlan:
    """Analysis plan: naming, vocabulary, per-round budgets, and the total cap."""

    analysis_id: str
    stream: str
    field: str
    vocab: tuple[str, ...]
    max_ngram_len: int
    round_budgets: Budgets
    total_epsilon: float
    total_delta: float
    tau: float = 3.0

    def round_recipe_id(self, length: int) -> str:
        return f"{self.analysis_id}-round{length}"


def initial_recipe(plan: DiscoveryPlan) -> Recipe:
    """Round 1: a single empty-prefix leaf, i.e. a histogram of 1-grams."""
    rule = PrefixTreeRule(
        name="ngram", field=plan.field, tree=PrefixTree(((),)), vocab=plan.vocab
    )
    return Recipe(
        recipe_id=plan.round_recipe_id(1),
        version=1,
        analysis_id=plan.analysis_id,
        query=Query(stream=plan.stream, fields=(plan.field,)),
        non_sensitive_fields=(),
        budgets=plan.round_budgets,
        data_content_type=EncodingSpec(features=(rule,)),
    )


def extend_prefixes(
    selection: FrequentSelection, plan: DiscoveryPlan, next_length: int
) -> Recipe | None:
    """Build the next round's recipe from the accepted (prefix, word) bins.

    Leaves keep depth-first order: parent leaves in their previous order, next
    words in vocabulary order (bin order already delivers exactly that).
    None when the frequent set is empty and discovery ends normally.
    """
    if not selection.extendable:
        return None
    leaves = tuple(prefix + (word,) for prefix, word, _ in selection.extendable)
    rule = PrefixTreeRule(
        name="ngram", field=plan.field, tree=PrefixTree(leaves), vocab=plan.vocab
    )
    return Recipe(
        recipe_id=plan.round_recipe_id(next_length),
        version=1,
        analysis_id=plan.analysis_id,
        query=Query(stream=plan.stream, fields=(plan.field,)),
        non_sensitive_fields=(),
        budgets=plan.round_budgets,
        data_content_type=EncodingSpec(features=(rule,)),
    )


@dataclass
class DiscoveryState:
    """Accepted prefixes per n-gram length, terminal phrases, and the ledger."""

    plan: DiscoveryPlan
    levels: list[list[tuple[tuple[str, ...], float]]] = field(default_factory=list)
    terminal: list[tuple[tuple[str, ...], float]] = field(default_factory=list)
    rounds: list[RoundResult | GatedRound] = field(default_factory=list)
    ledger: CompositionLedger = field(default_factory=CompositionLedger)
    status: str = "running"

    @property
    def round(self) -> int:
        return len(self.rounds)

    def accepted_at(self, length: int) -> list[tuple[tuple[str, ...], float]]:
        return self.levels[length - 1] if 0 < length <= len(self.levels) else []

    def check_hierarchy(self) -> None:
        for level in range(1, len(self.levels)):
            parents = {p for p, _ in self.levels[level - 1]}
            for prefix, _ in self.levels[level]:
                if prefix[:-1] not in parents:
                    raise EngineError(f"accepted {prefix} does not extend an accepted prefix")

    def to_doc(self) -> dict:
        total_eps, total_delta = compose_basic(self.ledger)
        return {
            "status": self.status,
            "round": self.round,
            "accepted": [
                {"length": level + 1, "prefix": list(p), "estimate": est}
                for level, entries in enumerate(self.levels)
                for p, est in entries
            ],
            "terminal": [{"prefix": list(p), "estimate": est} for p, est in self.terminal],
            "rounds": [r.to_doc() for r in self.rounds],
            "ledger": {
                "entries": [[e, d] for e, d in self.ledger.entries],
                "total_epsilon": total_eps,
                "total_delta": total_delta,
            },
        }


def plan_allows_next_round(plan: DiscoveryPlan, ledger: CompositionLedger) -> bool:
    """Engine-side mirror of Check 1 against the plan's total budget."""
    eps, delta = compose_basic(
        ledger.entries + [(plan.round_budgets.aggregate_epsilon, plan.round_budgets.delta)]
    )
    return eps <= plan.total_epsilon and delta <= plan.total_delta


def run_discovery(plan: DiscoveryPlan, fleet, trust_config, *, now: float = 0.0) -> DiscoveryState:
    """Iterate run_round -> select_frequent -> extend_prefixes up to the plan's limits."""
    state = DiscoveryState(plan=plan)
    recipe = initial_recipe(plan)
    for length in range(1, plan.max_ngram_len + 1):
        if not plan_allows_next_round(plan, state.ledger):
            state.status = "budget-exhausted"
            return state
        outcome = run_round(recipe, fleet, trust_config, ledger=state.ledger, now=now)
        state.rounds.append(outcome)
        if isinstance(outcome, GatedRound):
            state.status = "gated"
            return state
        selection = select_frequent(outcome, plan.tau)
        state.levels.append(
            [(prefix + (word,), est) for prefix, word, est in selection.extendable]
        )
        state.terminal.extend(selection.terminal)
        state.check_hierarchy()
        if length == plan.max_ngram_len:
            state.status = "done"
            return state
        recipe = extend_prefixes(selection, plan, length + 1)
        if recipe is None:
            state.status = "empty"
            return state
    state.status = "done"
    return state
