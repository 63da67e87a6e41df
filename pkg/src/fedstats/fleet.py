"""Array-based fleet for large simulations.

The object fleet in ``device`` runs the full per-device pipeline and is the
reference; this fleet vectorizes the same pipeline for homogeneous populations
(every device holds one phrase, shares one trust config, and answers the same
recipes), which is what the 10^5-device discovery runs need.  Decisions and
budget charges are identical across such a fleet, so one accountant carries
the common trajectory; report sampling, randomization, and share splitting
happen as whole-fleet array operations with the exact per-coordinate laws of
the single-report randomizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accountant import BudgetAccountant
from .device import CollectStats, DeviceTrustConfig, admit_recipe, certifier_for_mode, extract_candidates
from .randomizers import Mode, PrivacyModel, randomize_batch
from .recipe import Recipe


@dataclass(frozen=True)
class PhrasePopulation:
    """Distinct phrases and the per-device assignment drawn from them."""

    phrases: tuple[str, ...]
    assignment: np.ndarray  # device -> phrase index

    @classmethod
    def sample(
        cls, phrases: list[str], weights, size: int, rng: np.random.Generator
    ) -> "PhrasePopulation":
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        assignment = rng.choice(len(phrases), size=size, p=w)
        return cls(phrases=tuple(phrases), assignment=assignment)

    @classmethod
    def zipf(
        cls, phrases: list[str], s: float, size: int, rng: np.random.Generator
    ) -> "PhrasePopulation":
        ranks = np.arange(1, len(phrases) + 1, dtype=np.float64)
        return cls.sample(phrases, ranks**-s, size, rng)


class VectorFleet:
    """Homogeneous simulated fleet with array-level report generation."""

    def __init__(
        self,
        population: PhrasePopulation,
        trust_config: DeviceTrustConfig,
        *,
        field: str = "phrase",
        mode: Mode = Mode.ASYMMETRIC,
        fleet_seed: int = 0,
    ) -> None:
        self.population = population
        self.trust_config = trust_config
        self.field = field
        self.mode = mode
        self._rng = np.random.default_rng([fleet_seed, 0xF1EE7])
        model = PrivacyModel.DELETION if mode is Mode.SYMMETRIC else PrivacyModel.REPLACEMENT
        if len(trust_config.entries) != 1:
            raise ValueError("the vector fleet expects a single-analysis trust config")
        entry = trust_config.entries[0]
        self._entry = entry
        self._accountant = BudgetAccountant.from_config(
            entry.budgets, privacy_model=model, certifier=certifier_for_mode(mode)
        )
        self._schema_fields = {field}
        self._audit_counts: list[dict] = []

    @property
    def size(self) -> int:
        return int(self.population.assignment.shape[0])

    def __len__(self) -> int:
        return self.size

    def choose_bins(self, recipe: Recipe, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        """Per-device selected bin indices (matching candidate or random bin)."""
        spec = recipe.data_content_type
        d = spec.total_bins
        n = self.size
        bins = np.empty(n, dtype=np.int64)
        random_reports = 0
        for p_idx, phrase in enumerate(self.population.phrases):
            devices = np.flatnonzero(self.population.assignment == p_idx)
            if devices.size == 0:
                continue
            candidates = extract_candidates({self.field: phrase}, spec)
            if candidates:
                cand_bins = np.array([spec.encode_event(c) for c in candidates], dtype=np.int64)
                if cand_bins.shape[0] == 1:
                    bins[devices] = cand_bins[0]
                else:
                    bins[devices] = cand_bins[rng.integers(cand_bins.shape[0], size=devices.size)]
            else:
                bins[devices] = rng.integers(d, size=devices.size)
                random_reports += devices.size
        return bins, random_reports

    def collect(self, recipe: Recipe, window_a, window_b, now: float = 0.0) -> CollectStats:
        stats = CollectStats()
        decision, min_cohort = admit_recipe(
            recipe, self.trust_config, self._accountant, self._schema_fields
        )
        if not decision.approved:
            stats.denied[decision.reason] = self.size
            self._audit_counts.append(
                {"recipe_id": recipe.recipe_id, "decision": "denied", "reason": decision.reason, "devices": self.size}
            )
            return stats

        rng = self._rng
        bins, random_reports = self.choose_bins(recipe, rng)
        bits = randomize_batch(
            bins, recipe.total_bins, recipe.budgets.local_epsilon, self.mode, rng
        )
        shares_a = rng.integers(0, 2**32, size=bits.shape, dtype=np.uint32)
        shares_b = bits.astype(np.uint32) - shares_a
        window_a.accumulate_batch(shares_a)
        window_b.accumulate_batch(shares_b)
        stats.approved = self.size
        stats.random_reports = random_reports
        stats.max_min_cohort = min_cohort
        self._audit_counts.append(
            {
                "recipe_id": recipe.recipe_id,
                "decision": "approved",
                "devices": self.size,
                "random_reports": random_reports,
                "min_cohort": min_cohort,
            }
        )
        return stats

    def budget_snapshots(self) -> list[dict]:
        # every device in a homogeneous fleet shares the same trajectory
        snap = {self._entry.rules.prefix: self._accountant.snapshot()}
        return [snap] * self.size

    def audit_summary(self) -> list[dict]:
        return list(self._audit_counts)
