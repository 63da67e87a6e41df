"""Simulated device: secure event streams and the recipe handling pipeline.

A recipe travels through the device as: query-class verification, budget
check+charge, query execution (one matching event picked uniformly), one-hot
encoding, local randomization, share splitting, audit.  A denial at any gate
short-circuits with zero egress; once the budget check passes the charge
stands even if a later stage faults, so a crash can never yield an uncharged
egress.  Devices with no matching event still answer, with a uniformly random
bin, since sending nothing is itself disclosive.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .accountant import BudgetAccountant, Decision, QueryCost
from .aggregation import decode_share, encode_share, split
from .amplification import certified_epsilon
from .randomizers import (
    LocalEpsilon,
    Mode,
    OneHotVector,
    PrivacyModel,
    PrivatizedReport,
    randomize,
)
from .recipe import (
    AnalysisRules,
    EncodingSpec,
    NumericBuckets,
    PrefixTree,
    PrefixTreeRule,
    QueryTemplate,
    Recipe,
    RecipeError,
    parse_recipe,
    verify_query_class,
)


class DeviceError(RuntimeError):
    pass


def certifier_for_mode(mode: Mode):
    """Check-3 predicate: does aggregating m reports of this randomizer reach epsilon?"""

    def certify(eps0, m, epsilon, delta, model) -> bool:
        if eps0.value == 0.0:
            return True
        if delta <= 0.0:
            return False
        best = certified_epsilon(eps0, m, delta, mode)
        return best is not None and best <= epsilon

    return certify


def admit_recipe(
    recipe: Recipe,
    trust_config: "DeviceTrustConfig",
    accountant: BudgetAccountant,
    schema_fields: set[str] | None,
) -> tuple[Decision, int]:
    """The device admission gate: query class, non-sensitive registry, stream
    schema, then the atomic budget check+charge.  Returns the decision and the
    effective minimum cohort (max of the recipe's and the trust floor).
    """
    entry = trust_config.entry_for(recipe.analysis_id)
    verdict = verify_query_class(recipe, trust_config)
    if not verdict.approved:
        return verdict, 0
    for f in recipe.non_sensitive_fields:
        if f not in entry.non_sensitive_fields:
            return Decision(False, f"non-sensitive-field:{f}"), 0
    if schema_fields is not None:
        for f in recipe.query.fields:
            if f not in schema_fields:
                return Decision(False, f"schema-mismatch:{f}"), 0
    min_cohort = max(recipe.budgets.min_cohort, entry.min_cohort_floor)
    cost = QueryCost(
        local_epsilon=LocalEpsilon(recipe.budgets.local_epsilon),
        aggregate_epsilon=recipe.budgets.aggregate_epsilon,
        aggregate_delta=recipe.budgets.delta,
        fields_accessed=recipe.query.fields,
        min_cohort=min_cohort,
    )
    return accountant.check_and_charge(cost), min_cohort


@dataclass(frozen=True)
class StreamSchema:
    stream_id: str
    fields: dict[str, str]  # field name -> "string" | "number"
    retention: float  # seconds an event survives

    def validate(self, record: dict) -> None:
        unknown = set(record) - set(self.fields)
        if unknown:
            raise DeviceError(f"stream {self.stream_id}: unknown fields {sorted(unknown)}")
        for name, kind in self.fields.items():
            if name not in record:
                raise DeviceError(f"stream {self.stream_id}: record missing field {name!r}")
            value = record[name]
            if kind == "string" and not isinstance(value, str):
                raise DeviceError(f"stream {self.stream_id}: field {name!r} must be a string")
            if kind == "number" and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise DeviceError(f"stream {self.stream_id}: field {name!r} must be a number")


class EventStream:
    """Ordered event records with arrival timestamps and lazy retention expiry."""

    def __init__(self, schema: StreamSchema) -> None:
        self.schema = schema
        self._events: list[tuple[float, dict]] = []

    def ingest(self, record: dict, now: float) -> None:
        self.schema.validate(record)
        self._events.append((now, dict(record)))

    def records_at(self, now: float) -> list[dict]:
        self._events = [(ts, r) for ts, r in self._events if now - ts <= self.schema.retention]
        return [r for _, r in self._events]


@dataclass(frozen=True)
class TrustEntry:
    """Everything the OS hard-codes about one approved analysis."""

    rules: AnalysisRules
    non_sensitive_fields: tuple[str, ...]
    budgets: dict
    min_cohort_floor: int = 1


@dataclass(frozen=True)
class DeviceTrustConfig:
    """Immutable allowlists and initial budget tables, loaded at construction."""

    entries: tuple[TrustEntry, ...]

    def entry_for(self, analysis_id: str) -> TrustEntry | None:
        for entry in self.entries:
            if analysis_id.startswith(entry.rules.prefix):
                return entry
        return None

    def rules_for(self, analysis_id: str) -> AnalysisRules | None:
        entry = self.entry_for(analysis_id)
        return entry.rules if entry else None

    @classmethod
    def from_document(cls, doc: dict | str) -> "DeviceTrustConfig":
        if isinstance(doc, str):
            doc = json.loads(doc)
        entries = []
        for item in doc["analyses"]:
            rules = AnalysisRules(
                prefix=item["prefix"],
                allowed_streams=tuple(item["allowed_streams"]),
                allowed_fields=tuple(item["allowed_fields"]),
                templates=tuple(QueryTemplate.from_doc(t) for t in item["templates"]),
            )
            entries.append(
                TrustEntry(
                    rules=rules,
                    non_sensitive_fields=tuple(item.get("non_sensitive_fields", ())),
                    budgets=item["budgets"],
                    min_cohort_floor=int(item.get("min_cohort_floor", 1)),
                )
            )
        return cls(entries=tuple(entries))


@dataclass(frozen=True)
class AuditRecord:
    timestamp: float
    recipe_id: str
    decision: str  # "approved" | "denied"
    failing_check: str | None
    report_hash: str | None
    share_hashes: tuple[str, str] | None
    min_cohort: int
    random_report: bool = False

    def to_json_line(self) -> str:
        doc = {
            "timestamp": self.timestamp,
            "recipe_id": self.recipe_id,
            "decision": self.decision,
            "failing_check": self.failing_check,
            "report_hash": self.report_hash,
            "share_hashes": list(self.share_hashes) if self.share_hashes else None,
            "min_cohort": self.min_cohort,
            "random_report": self.random_report,
        }
        return json.dumps(doc, sort_keys=True)


@dataclass(frozen=True)
class DeviceResponse:
    kind: str  # "shares" | "denied"
    reason: str | None = None
    shares: tuple[bytes, bytes] | None = None
    clear_metadata: dict = field(default_factory=dict)
    random_report: bool = False
    min_cohort: int = 0

    @property
    def emitted(self) -> bool:
        return self.kind == "shares"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def extract_candidates(record: dict, spec: EncodingSpec) -> list[dict]:
    """All candidate feature-value tuples one event offers for this encoding.

    Numeric features contribute the event's value.  Tree features contribute
    every n-gram (window of depth+1 words) whose prefix is a tree leaf, plus
    the terminal window when the phrase ends exactly at a leaf.
    """
    per_feature: list[list] = []
    for f in spec.features:
        value = record.get(f.field)
        if value is None:
            return []
        if isinstance(f, NumericBuckets):
            per_feature.append([value])
            continue
        words = tuple(value.split()) if isinstance(value, str) else tuple(value)
        depth = f.tree.depth
        candidates = []
        for i in range(len(words) - depth):
            window = words[i : i + depth + 1]
            if f.tree.index_of(window[:depth]) is not None:
                candidates.append(window)
        if depth >= 1 and len(words) >= depth:
            tail = words[len(words) - depth :]
            if f.tree.index_of(tail) is not None:
                candidates.append(tail)  # the phrase ends at this leaf
        if not candidates:
            return []
        per_feature.append(candidates)
    out: list[dict] = []

    def expand(i: int, acc: dict) -> None:
        if i == len(spec.features):
            out.append(dict(acc))
            return
        f = spec.features[i]
        for v in per_feature[i]:
            acc[f.field] = v
            expand(i + 1, acc)

    expand(0, {})
    return out


class Device:
    """One simulated device; single-threaded by construction."""

    def __init__(
        self,
        device_id: int,
        trust_config: DeviceTrustConfig,
        stream_schemas: list[StreamSchema],
        *,
        mode: Mode = Mode.ASYMMETRIC,
        attributes: dict | None = None,
        opted_in: bool = True,
        tree_cache: dict[str, PrefixTree] | None = None,
    ) -> None:
        self.device_id = device_id
        self.trust_config = trust_config
        self.mode = mode
        self.attributes = dict(attributes or {})
        self.opted_in = opted_in
        self.tree_cache = dict(tree_cache or {})
        self.streams = {s.stream_id: EventStream(s) for s in stream_schemas}
        model = PrivacyModel.DELETION if mode is Mode.SYMMETRIC else PrivacyModel.REPLACEMENT
        self.accountants = {
            entry.rules.prefix: BudgetAccountant.from_config(
                entry.budgets, privacy_model=model, certifier=certifier_for_mode(mode)
            )
            for entry in trust_config.entries
        }
        self.audit: list[AuditRecord] = []

    def ingest_event(self, stream_id: str, record: dict, now: float) -> None:
        stream = self.streams.get(stream_id)
        if stream is None:
            raise DeviceError(f"unknown stream {stream_id!r}")
        stream.ingest(record, now)

    def _deny(self, recipe: Recipe, now: float, reason: str, min_cohort: int = 0) -> DeviceResponse:
        self.audit.append(
            AuditRecord(
                timestamp=now,
                recipe_id=recipe.recipe_id,
                decision="denied",
                failing_check=reason,
                report_hash=None,
                share_hashes=None,
                min_cohort=min_cohort,
            )
        )
        return DeviceResponse(kind="denied", reason=reason)

    def handle_recipe_document(
        self, document: str | bytes | dict, now: float, rng: np.random.Generator
    ) -> DeviceResponse:
        try:
            recipe = parse_recipe(document, tree_cache=self.tree_cache)
        except RecipeError as exc:
            # nothing to audit against a recipe id we could not even parse
            return DeviceResponse(kind="denied", reason=f"recipe-parse:{exc}")
        return self.handle_recipe(recipe, now, rng)

    def handle_recipe(self, recipe: Recipe, now: float, rng: np.random.Generator) -> DeviceResponse:
        if not self.opted_in:
            return self._deny(recipe, now, "not-opted-in")
        stream = self.streams.get(recipe.query.stream)
        if stream is None:
            return self._deny(recipe, now, f"unknown-stream:{recipe.query.stream}")

        entry = self.trust_config.entry_for(recipe.analysis_id)
        accountant = self.accountants[entry.rules.prefix] if entry else None
        decision, min_cohort = admit_recipe(
            recipe, self.trust_config, accountant, set(stream.schema.fields)
        )
        if not decision.approved:
            return self._deny(recipe, now, decision.reason, min_cohort)

        # the budget is spent from here on, even if a later stage faults
        try:
            response = self._respond(recipe, stream, now, rng, min_cohort)
        except Exception as exc:  # noqa: BLE001 - fault means charged but egress-free
            return self._deny(recipe, now, f"device-fault:{exc}", min_cohort)
        return response

    def _respond(
        self,
        recipe: Recipe,
        stream: EventStream,
        now: float,
        rng: np.random.Generator,
        min_cohort: int,
    ) -> DeviceResponse:
        spec = recipe.data_content_type
        matching: list[dict] = []
        for record in stream.records_at(now):
            matching.extend(extract_candidates(record, spec))
        if matching:
            choice = matching[0] if len(matching) == 1 else matching[int(rng.integers(len(matching)))]
            bin_index = spec.encode_event(choice)
            random_report = False
        else:
            bin_index = int(rng.integers(spec.total_bins))
            random_report = True

        report: PrivatizedReport = randomize(
            OneHotVector(domain_size=spec.total_bins, hot_index=bin_index),
            recipe.budgets.local_epsilon,
            self.mode,
            rng,
        )
        share_a, share_b = split(report, recipe.recipe_id, rng)
        wire_a, wire_b = encode_share(share_a), encode_share(share_b)
        metadata = {
            f: self.attributes[f] for f in recipe.non_sensitive_fields if f in self.attributes
        }
        self.audit.append(
            AuditRecord(
                timestamp=now,
                recipe_id=recipe.recipe_id,
                decision="approved",
                failing_check=None,
                report_hash=_sha256(report.bits.tobytes()),
                share_hashes=(_sha256(wire_a), _sha256(wire_b)),
                min_cohort=min_cohort,
                random_report=random_report,
            )
        )
        return DeviceResponse(
            kind="shares",
            shares=(wire_a, wire_b),
            clear_metadata=metadata,
            random_report=random_report,
            min_cohort=min_cohort,
        )

    def export_audit(self) -> list[AuditRecord]:
        return list(self.audit)

    def export_audit_jsonl(self) -> str:
        return "\n".join(rec.to_json_line() for rec in self.audit)

    def budget_snapshot(self) -> dict:
        return {prefix: acct.snapshot() for prefix, acct in self.accountants.items()}


@dataclass
class CollectStats:
    """What one recipe deployment did across the fleet."""

    approved: int = 0
    denied: dict = field(default_factory=dict)  # reason -> count
    random_reports: int = 0
    max_min_cohort: int = 0

    def note_denied(self, reason: str) -> None:
        self.denied[reason] = self.denied.get(reason, 0) + 1


class DeviceFleet:
    """Object-level fleet: full per-device pipelines, one RNG stream per device."""

    def __init__(self, devices: list[Device], fleet_seed: int = 0) -> None:
        self.devices = devices
        self._rngs = {
            d.device_id: np.random.default_rng([fleet_seed, d.device_id]) for d in devices
        }

    def __len__(self) -> int:
        return len(self.devices)

    @property
    def size(self) -> int:
        return len(self.devices)

    @property
    def mode(self) -> Mode:
        modes = {d.mode for d in self.devices}
        if len(modes) != 1:
            raise DeviceError(f"fleet mixes randomizer modes: {sorted(m.value for m in modes)}")
        return next(iter(modes))

    def respond(self, recipe: Recipe, now: float = 0.0) -> list[DeviceResponse]:
        return [
            device.handle_recipe(recipe, now, self._rngs[device.device_id])
            for device in self.devices
        ]

    def collect(self, recipe: Recipe, window_a, window_b, now: float = 0.0) -> CollectStats:
        """Deploy the recipe and feed every emitted share over the wire format."""
        stats = CollectStats()
        for response in self.respond(recipe, now):
            if response.emitted:
                window_a.accumulate(decode_share(response.shares[0]))
                window_b.accumulate(decode_share(response.shares[1]))
                stats.approved += 1
                stats.random_reports += int(response.random_report)
                stats.max_min_cohort = max(stats.max_min_cohort, response.min_cohort)
            else:
                stats.note_denied(response.reason)
        return stats

    def budget_snapshots(self) -> list[dict]:
        return [d.budget_snapshot() for d in self.devices]

    def audit_records(self) -> list[AuditRecord]:
        out: list[AuditRecord] = []
        for d in self.devices:
            out.extend(d.export_audit())
        return out
