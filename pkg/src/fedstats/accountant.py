"""On-device privacy budget accountant.

Enforces the three admission checks for a query: the analysis has epsilon and
report budget left, every accessed data field has local/aggregate/report
budget left, and the requested aggregate guarantee is actually certified by
the amplification bound at the promised minimum cohort size.  Approved charges
update both ledgers; denials change nothing.

The paper's tables track only epsilon; a parallel per-analysis delta ledger is
kept as an extension (basic composition, configurable allowance).
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .amplification import closed_form_epsilon, compose_advanced
from .randomizers import LocalEpsilon, PrivacyModel, as_epsilon


class AccountantFault(RuntimeError):
    """Inconsistent accountant state or a charge without approval."""


@dataclass
class AnalysisBudget:
    allowed_epsilon: float
    allowed_reports: int
    allowed_delta: float = 1e-6
    used_epsilon: float = 0.0
    used_delta: float = 0.0
    used_reports: int = 0


@dataclass
class FieldBudget:
    field_id: str
    allowed_local_epsilon: float
    allowed_epsilon: float
    allowed_reports: int
    used_epsilon: float = 0.0
    used_reports: int = 0


@dataclass(frozen=True)
class QueryCost:
    """What one query asks to spend."""

    local_epsilon: LocalEpsilon
    aggregate_epsilon: float
    aggregate_delta: float
    fields_accessed: tuple[str, ...]
    min_cohort: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "local_epsilon", as_epsilon(self.local_epsilon))
        object.__setattr__(self, "fields_accessed", tuple(self.fields_accessed))
        if not self.fields_accessed:
            raise ValueError("a query must access at least one field")
        if self.min_cohort < 1:
            raise ValueError(f"min_cohort must be >= 1, got {self.min_cohort}")
        if self.aggregate_epsilon < 0 or not 0.0 <= self.aggregate_delta <= 1.0:
            raise ValueError("invalid aggregate privacy parameters")


@dataclass(frozen=True)
class Decision:
    approved: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.approved


APPROVE = Decision(approved=True)


def default_certifier(
    eps0: LocalEpsilon, m: int, epsilon: float, delta: float, model: PrivacyModel
) -> bool:
    """Check 3 via the closed-form amplification bound."""
    if eps0.value == 0.0:
        # reports are input-independent, so any aggregation is (0, 0)-DP
        return True
    if delta <= 0.0:
        return False  # the closed form certifies nothing at delta = 0
    bound = closed_form_epsilon(eps0, m, delta, model)
    return bound.applicable and bound.epsilon <= epsilon


class BudgetAccountant:
    """One device's budget state for one analysis, with an append-only journal.

    check + charge is exposed as a single atomic transaction; plain charge()
    re-verifies approval under the lock and hard-faults otherwise.
    """

    def __init__(
        self,
        analysis: AnalysisBudget,
        fields: dict[str, FieldBudget],
        *,
        privacy_model: PrivacyModel = PrivacyModel.REPLACEMENT,
        certifier: Callable[..., bool] = default_certifier,
        allowed_local_epsilon: float | None = None,
        journal_path: str | Path | None = None,
        composition: str = "basic",
        advanced_slack: float = 1e-8,
    ) -> None:
        if composition not in ("basic", "advanced"):
            raise ValueError(f"unknown composition rule {composition!r}")
        self._analysis = analysis
        self._fields = dict(fields)
        self._model = privacy_model
        self._certifier = certifier
        self._composition = composition
        self._advanced_slack = advanced_slack
        self._allowed_local = (
            allowed_local_epsilon
            if allowed_local_epsilon is not None
            else max((f.allowed_local_epsilon for f in self._fields.values()), default=0.0)
        )
        self._lock = threading.Lock()
        # eps histories feed compensated sums so used == fsum(charges) exactly
        self._eps_history: list[float] = []
        self._delta_history: list[float] = []
        self._field_eps_history: dict[str, list[float]] = {f: [] for f in self._fields}
        self._journal_path = Path(journal_path) if journal_path is not None else None
        self._validate()

    def _validate(self) -> None:
        a = self._analysis
        if not (0.0 <= a.used_epsilon <= a.allowed_epsilon):
            raise AccountantFault("analysis epsilon ledger inconsistent")
        if not (0 <= a.used_reports <= a.allowed_reports):
            raise AccountantFault("analysis report ledger inconsistent")
        if not (0.0 <= a.used_delta <= a.allowed_delta):
            raise AccountantFault("analysis delta ledger inconsistent")
        for f in self._fields.values():
            if not (0.0 <= f.used_epsilon <= f.allowed_epsilon):
                raise AccountantFault(f"field {f.field_id} epsilon ledger inconsistent")
            if not (0 <= f.used_reports <= f.allowed_reports):
                raise AccountantFault(f"field {f.field_id} report ledger inconsistent")

    def _evaluate(self, cost: QueryCost) -> Decision:
        self._validate()
        a = self._analysis
        if self._composition == "advanced":
            # conservative: uniformize at the largest per-round parameters,
            # since the advanced theorem is stated for homogeneous rounds
            eps_max = max(self._eps_history + [cost.aggregate_epsilon])
            delta_max = max(self._delta_history + [cost.aggregate_delta])
            eps_total, delta_total = compose_advanced(
                eps_max, delta_max, a.used_reports + 1, self._advanced_slack
            )
            if eps_total > a.allowed_epsilon:
                return Decision(False, "analysis-epsilon")
            if a.used_reports + 1 > a.allowed_reports:
                return Decision(False, "analysis-reports")
            if delta_total > a.allowed_delta:
                return Decision(False, "analysis-delta")
        else:
            if cost.aggregate_epsilon + a.used_epsilon > a.allowed_epsilon:
                return Decision(False, "analysis-epsilon")
            if a.used_reports + 1 > a.allowed_reports:
                return Decision(False, "analysis-reports")
            if cost.aggregate_delta + a.used_delta > a.allowed_delta:
                return Decision(False, "analysis-delta")
        for field_id in cost.fields_accessed:
            fb = self._fields.get(field_id)
            if fb is None:
                return Decision(False, f"field-unknown:{field_id}")
            if cost.local_epsilon.value > fb.allowed_local_epsilon:
                return Decision(False, f"field-local-epsilon:{field_id}")
            if cost.aggregate_epsilon + fb.used_epsilon > fb.allowed_epsilon:
                return Decision(False, f"field-epsilon:{field_id}")
            if fb.used_reports + 1 > fb.allowed_reports:
                return Decision(False, f"field-reports:{field_id}")
        if not self._certifier(
            cost.local_epsilon,
            cost.min_cohort,
            cost.aggregate_epsilon,
            cost.aggregate_delta,
            self._model,
        ):
            return Decision(False, "min-cohort")
        return APPROVE

    def check(self, cost: QueryCost) -> Decision:
        with self._lock:
            return self._evaluate(cost)

    def _apply(self, cost: QueryCost) -> None:
        a = self._analysis
        self._eps_history.append(cost.aggregate_epsilon)
        self._delta_history.append(cost.aggregate_delta)
        a.used_epsilon = math.fsum(self._eps_history)
        a.used_delta = math.fsum(self._delta_history)
        a.used_reports += 1
        for field_id in cost.fields_accessed:
            fb = self._fields[field_id]
            hist = self._field_eps_history[field_id]
            hist.append(cost.aggregate_epsilon)
            fb.used_epsilon = math.fsum(hist)
            fb.used_reports += 1
        if self._journal_path is not None:
            entry = {
                "epsilon": cost.aggregate_epsilon,
                "delta": cost.aggregate_delta,
                "local_epsilon": cost.local_epsilon.value,
                "fields": list(cost.fields_accessed),
                "min_cohort": cost.min_cohort,
            }
            with self._journal_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def charge(self, cost: QueryCost) -> None:
        with self._lock:
            decision = self._evaluate(cost)
            if not decision:
                raise AccountantFault(f"charge without approval: {decision.reason}")
            self._apply(cost)

    def check_and_charge(self, cost: QueryCost) -> Decision:
        with self._lock:
            decision = self._evaluate(cost)
            if decision:
                self._apply(cost)
            return decision

    def local_loss_bound(self) -> tuple[float, dict[str, float]]:
        """Worst-case local privacy loss implied by the report-count limits."""
        with self._lock:
            analysis_bound = self._allowed_local * self._analysis.allowed_reports
            per_field = {
                f.field_id: f.allowed_local_epsilon * f.allowed_reports
                for f in self._fields.values()
            }
            return analysis_bound, per_field

    def charged_epsilons(self) -> list[float]:
        with self._lock:
            return list(self._eps_history)

    def snapshot(self) -> dict:
        """Canonical state document (consumed by audit export and the API roll-up)."""
        with self._lock:
            a = self._analysis
            return {
                "analysis": {
                    "allowed_epsilon": a.allowed_epsilon,
                    "used_epsilon": a.used_epsilon,
                    "allowed_delta": a.allowed_delta,
                    "used_delta": a.used_delta,
                    "allowed_reports": a.allowed_reports,
                    "used_reports": a.used_reports,
                },
                "fields": {
                    f.field_id: {
                        "allowed_local_epsilon": f.allowed_local_epsilon,
                        "allowed_epsilon": f.allowed_epsilon,
                        "used_epsilon": f.used_epsilon,
                        "allowed_reports": f.allowed_reports,
                        "used_reports": f.used_reports,
                    }
                    for f in sorted(self._fields.values(), key=lambda f: f.field_id)
                },
            }

    @classmethod
    def from_config(
        cls,
        config: dict,
        *,
        privacy_model: PrivacyModel = PrivacyModel.REPLACEMENT,
        certifier: Callable[..., bool] = default_certifier,
        journal_path: str | Path | None = None,
        composition: str = "basic",
        advanced_slack: float = 1e-8,
    ) -> "BudgetAccountant":
        """Build a fresh accountant from an initial budget table document."""
        analysis = AnalysisBudget(
            allowed_epsilon=float(config["analysis"]["allowed_epsilon"]),
            allowed_reports=int(config["analysis"]["allowed_reports"]),
            allowed_delta=float(config["analysis"].get("allowed_delta", 1e-6)),
        )
        fields = {
            fid: FieldBudget(
                field_id=fid,
                allowed_local_epsilon=float(spec["allowed_local_epsilon"]),
                allowed_epsilon=float(spec["allowed_epsilon"]),
                allowed_reports=int(spec["allowed_reports"]),
            )
            for fid, spec in config["fields"].items()
        }
        return cls(
            analysis,
            fields,
            privacy_model=privacy_model,
            certifier=certifier,
            allowed_local_epsilon=config["analysis"].get("allowed_local_epsilon"),
            journal_path=journal_path,
            composition=composition,
            advanced_slack=advanced_slack,
        )

    @classmethod
    def replay_journal(
        cls,
        config: dict,
        journal_path: str | Path,
        **kwargs,
    ) -> "BudgetAccountant":
        """Rebuild an accountant after a restart; budgets cannot reset.

        Re-applies every journaled charge, then re-validates the invariants so
        a tampered journal faults rather than silently repairing.
        """
        acct = cls.from_config(config, journal_path=journal_path, **kwargs)
        path = Path(journal_path)
        if path.exists():
            with path.open(encoding="utf-8") as fh:
                entries = [json.loads(line) for line in fh if line.strip()]
            # restore histories directly, without re-journaling
            saved, acct._journal_path = acct._journal_path, None
            try:
                for e in entries:
                    cost = QueryCost(
                        local_epsilon=LocalEpsilon(e["local_epsilon"]),
                        aggregate_epsilon=e["epsilon"],
                        aggregate_delta=e["delta"],
                        fields_accessed=tuple(e["fields"]),
                        min_cohort=e["min_cohort"],
                    )
                    a = acct._analysis
                    acct._eps_history.append(cost.aggregate_epsilon)
                    acct._delta_history.append(cost.aggregate_delta)
                    a.used_epsilon = math.fsum(acct._eps_history)
                    a.used_delta = math.fsum(acct._delta_history)
                    a.used_reports += 1
                    for fid in cost.fields_accessed:
                        if fid not in acct._fields:
                            raise AccountantFault(f"journal references unknown field {fid}")
                        fb = acct._fields[fid]
                        hist = acct._field_eps_history[fid]
                        hist.append(cost.aggregate_epsilon)
                        fb.used_epsilon = math.fsum(hist)
                        fb.used_reports += 1
            finally:
                acct._journal_path = saved
            acct._validate()
        return acct


def table1_example_config() -> dict:
    """The keyboard-analysis budget tables used throughout the docs and demos."""
    return {
        "analysis": {"allowed_epsilon": 0.5, "allowed_reports": 1, "allowed_delta": 1e-6},
        "fields": {
            "ngram": {"allowed_local_epsilon": 5.0, "allowed_epsilon": 1.0, "allowed_reports": 1},
            "bucketed_age": {"allowed_local_epsilon": 2.0, "allowed_epsilon": 0.3, "allowed_reports": 1},
            "model_perplexity": {"allowed_local_epsilon": 8.0, "allowed_epsilon": 1.0, "allowed_reports": 1},
        },
    }
