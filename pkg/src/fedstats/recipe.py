"""Recipe data model, query-class verification, and the one-hot encoding schema.

A recipe is the server-to-device query envelope: the query itself, the
requested budgets, and a scheme that maps the query output onto a one-hot
index space.  Features are either numeric bucketings (half-open [a, b)
buckets plus an out-of-vocabulary catch-all) or prefix-tree rules (global
OOV, then per leaf an end-token, a leaf-OOV, and one bin per vocabulary
word).  Bin 0 of every feature is its OOV bucket; the cross-feature index is
the mixed-radix composition in feature order.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from .accountant import Decision

SUPPORTED_VERSIONS = (1,)

END_TOKEN_LABEL = "end-token"
OOV_LABEL = "OOV"


class RecipeError(ValueError):
    """Malformed recipe document or schema violation."""


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _require_token(word: str, where: str) -> str:
    if not isinstance(word, str) or not word or any(c.isspace() for c in word):
        raise RecipeError(f"{where}: tokens must be non-empty strings without whitespace, got {word!r}")
    return word


@dataclass(frozen=True)
class PrefixTree:
    """Accepted prefixes, all of equal length, in a fixed canonical order."""

    leaves: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        leaves = tuple(tuple(leaf) for leaf in self.leaves)
        object.__setattr__(self, "leaves", leaves)
        if not leaves:
            raise RecipeError("prefix tree must have at least one leaf")
        depth = len(leaves[0])
        for leaf in leaves:
            if len(leaf) != depth:
                raise RecipeError("all prefix tree leaves must have equal depth")
            for word in leaf:
                _require_token(word, "prefix tree leaf")
        if len(set(leaves)) != len(leaves):
            raise RecipeError("duplicate prefix tree leaves")

    @property
    def depth(self) -> int:
        return len(self.leaves[0])

    def index_of(self, prefix: tuple[str, ...]) -> int | None:
        try:
            return self.leaves.index(tuple(prefix))
        except ValueError:
            return None

    def content_hash(self) -> str:
        payload = canonical_json([list(leaf) for leaf in self.leaves])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class NumericBuckets:
    """Half-open buckets [b_i, b_{i+1}) from k+1 sorted boundaries, plus OOV at index 0."""

    name: str
    field: str
    boundaries: tuple[float, ...]

    def __post_init__(self) -> None:
        bounds = tuple(float(b) for b in self.boundaries)
        object.__setattr__(self, "boundaries", bounds)
        if len(bounds) < 2:
            raise RecipeError(f"feature {self.name}: need at least two bucket boundaries")
        if any(a >= b for a, b in zip(bounds, bounds[1:])):
            raise RecipeError(f"feature {self.name}: boundaries must be strictly increasing")

    @property
    def bin_count(self) -> int:
        return len(self.boundaries)  # (k+1 boundaries - 1) buckets + OOV

    def bin_of(self, value) -> int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise RecipeError(f"feature {self.name}: expected a numeric value, got {value!r}")
        j = bisect_right(self.boundaries, float(value))
        return j if 1 <= j <= len(self.boundaries) - 1 else 0

    def labels(self) -> list[str]:
        out = [OOV_LABEL]
        for a, b in zip(self.boundaries, self.boundaries[1:]):
            out.append(f"[{a:g}, {b:g})")
        return out

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "kind": "numeric_buckets",
            "field": self.field,
            "boundaries": list(self.boundaries),
        }


@dataclass(frozen=True)
class PrefixTreeRule:
    """Prefix tree x vocabulary bucketing for n-grams.

    Bins: global OOV, then per leaf (end-token, leaf-OOV, one bin per vocab
    word), leaves in specification order.
    """

    name: str
    field: str
    tree: PrefixTree
    vocab: tuple[str, ...]

    def __post_init__(self) -> None:
        vocab = tuple(_require_token(w, f"feature {self.name} vocab") for w in self.vocab)
        object.__setattr__(self, "vocab", vocab)
        if not vocab:
            raise RecipeError(f"feature {self.name}: vocabulary must be nonempty")
        if len(set(vocab)) != len(vocab):
            raise RecipeError(f"feature {self.name}: duplicate vocabulary words")

    @property
    def bins_per_leaf(self) -> int:
        return 2 + len(self.vocab)

    @property
    def bin_count(self) -> int:
        return 1 + len(self.tree.leaves) * self.bins_per_leaf

    def bin_of(self, value) -> int:
        if isinstance(value, str):
            value = tuple(value.split())
        words = tuple(value)
        depth = self.tree.depth
        if len(words) == depth:
            # the n-gram is exactly a prefix: the phrase ended at a leaf
            leaf = self.tree.index_of(words)
            return 0 if leaf is None else 1 + leaf * self.bins_per_leaf
        if len(words) != depth + 1:
            raise RecipeError(
                f"feature {self.name}: expected an n-gram of {depth + 1} words "
                f"(or {depth} for a terminal phrase), got {len(words)}"
            )
        leaf = self.tree.index_of(words[:depth])
        if leaf is None:
            return 0
        base = 1 + leaf * self.bins_per_leaf
        try:
            return base + 2 + self.vocab.index(words[-1])
        except ValueError:
            return base + 1  # per-leaf OOV

    def labels(self) -> list[str]:
        out = [OOV_LABEL]
        for leaf in self.tree.leaves:
            prefix = " ".join(leaf)
            sep = " " if prefix else ""
            out.append(f"{prefix}{sep}{END_TOKEN_LABEL}")
            out.append(f"{prefix}{sep}{OOV_LABEL}")
            out.extend(f"{prefix}{sep}{word}" for word in self.vocab)
        return out

    def is_end_token_bin(self, bin_index: int) -> bool:
        return bin_index >= 1 and (bin_index - 1) % self.bins_per_leaf == 0

    def is_oov_bin(self, bin_index: int) -> bool:
        return bin_index == 0 or (bin_index - 1) % self.bins_per_leaf == 1

    def vocab_bin_parts(self, bin_index: int) -> tuple[tuple[str, ...], str] | None:
        """Decompose a vocab-word bin into (leaf, word); None for OOV/end-token bins."""
        if bin_index == 0:
            return None
        leaf_idx, within = divmod(bin_index - 1, self.bins_per_leaf)
        if within < 2:
            return None
        return self.tree.leaves[leaf_idx], self.vocab[within - 2]

    def to_doc(self, tree_by_hash: bool = False) -> dict:
        doc = {
            "name": self.name,
            "kind": "prefix_tree",
            "field": self.field,
            "vocab": list(self.vocab),
        }
        if tree_by_hash:
            doc["prefixes_hash"] = self.tree.content_hash()
        else:
            doc["prefixes"] = [list(leaf) for leaf in self.tree.leaves]
        return doc


FeatureRule = NumericBuckets | PrefixTreeRule


@dataclass(frozen=True)
class EncodingSpec:
    """Ordered feature tuple; the one-hot index space is their mixed-radix product."""

    features: tuple[FeatureRule, ...]

    def __post_init__(self) -> None:
        features = tuple(self.features)
        object.__setattr__(self, "features", features)
        if not features:
            raise RecipeError("encoding needs at least one feature")
        names = [f.name for f in features]
        if len(set(names)) != len(names):
            raise RecipeError("duplicate feature names")

    @property
    def total_bins(self) -> int:
        total = 1
        for f in self.features:
            total *= f.bin_count
        return total

    def compose(self, per_feature: Sequence[int]) -> int:
        """Mixed-radix composition, first feature most significant."""
        if len(per_feature) != len(self.features):
            raise RecipeError("per-feature index count mismatch")
        idx = 0
        for f, j in zip(self.features, per_feature):
            if not 0 <= j < f.bin_count:
                raise RecipeError(f"feature {f.name}: index {j} out of range")
            idx = idx * f.bin_count + j
        return idx

    def decompose(self, bin_index: int) -> tuple[int, ...]:
        if not 0 <= bin_index < self.total_bins:
            raise RecipeError(f"bin index {bin_index} out of range")
        parts = []
        for f in reversed(self.features):
            bin_index, j = divmod(bin_index, f.bin_count)
            parts.append(j)
        return tuple(reversed(parts))

    def encode_event(self, event: dict) -> int:
        per_feature = []
        for f in self.features:
            if f.field not in event:
                raise RecipeError(f"event is missing feature field {f.field!r}")
            per_feature.append(f.bin_of(event[f.field]))
        return self.compose(per_feature)

    def bin_labels(self) -> list[str]:
        labels = [""] * self.total_bins
        per_feature = [f.labels() for f in self.features]
        for idx in range(self.total_bins):
            parts = self.decompose(idx)
            labels[idx] = "|".join(
                f"{f.name}={per_feature[i][j]}" for i, (f, j) in enumerate(zip(self.features, parts))
            )
        return labels

    def to_doc(self, tree_by_hash: bool = False) -> dict:
        return {
            "features": [
                f.to_doc(tree_by_hash) if isinstance(f, PrefixTreeRule) else f.to_doc()
                for f in self.features
            ]
        }


def build_encoding(spec: EncodingSpec) -> EncodingSpec:
    """The spec itself is the deterministic bin index map; returned for symmetry."""
    return spec


def encode_event(event: dict, spec: EncodingSpec) -> int:
    return spec.encode_event(event)


@dataclass(frozen=True)
class Query:
    """Declarative query: the stream it runs on and every field it reads."""

    stream: str
    fields: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.stream:
            raise RecipeError("query must name a stream")
        if not self.fields:
            raise RecipeError("query must list the fields it accesses")
        if len(set(self.fields)) != len(self.fields):
            raise RecipeError("duplicate query fields")

    def to_doc(self) -> dict:
        return {"stream": self.stream, "fields": list(self.fields)}


@dataclass(frozen=True)
class Budgets:
    local_epsilon: float
    aggregate_epsilon: float
    delta: float
    min_cohort: int

    def __post_init__(self) -> None:
        if self.local_epsilon <= 0 or self.aggregate_epsilon <= 0 or self.delta <= 0:
            raise RecipeError("all requested budgets must be positive")
        if self.min_cohort < 1:
            raise RecipeError("min_cohort must be >= 1")


@dataclass(frozen=True)
class Recipe:
    recipe_id: str
    version: int
    analysis_id: str
    query: Query
    non_sensitive_fields: tuple[str, ...]
    budgets: Budgets
    data_content_type: EncodingSpec

    def __post_init__(self) -> None:
        object.__setattr__(self, "non_sensitive_fields", tuple(self.non_sensitive_fields))
        if not self.recipe_id:
            raise RecipeError("recipe_id must be nonempty")
        if self.version not in SUPPORTED_VERSIONS:
            raise RecipeError(f"unsupported recipe version {self.version}")
        declared = set(self.query.fields)
        for f in self.data_content_type.features:
            if f.field not in declared:
                raise RecipeError(
                    f"feature {f.name} reads field {f.field!r} not declared by the query"
                )

    @property
    def total_bins(self) -> int:
        return self.data_content_type.total_bins

    def to_doc(self, tree_by_hash: bool = False) -> dict:
        return {
            "recipe_id": self.recipe_id,
            "version": self.version,
            "analysis_id": self.analysis_id,
            "query": self.query.to_doc(),
            "non_sensitive_fields": list(self.non_sensitive_fields),
            "budgets": {
                "local_epsilon": self.budgets.local_epsilon,
                "aggregate_epsilon": self.budgets.aggregate_epsilon,
                "delta": self.budgets.delta,
                "min_cohort": self.budgets.min_cohort,
            },
            "data_content_type": self.data_content_type.to_doc(tree_by_hash),
        }

    def serialize(self, tree_by_hash: bool = False) -> str:
        return canonical_json(self.to_doc(tree_by_hash))


def _take(doc: dict, keys: set[str], where: str) -> None:
    unknown = set(doc) - keys
    if unknown:
        raise RecipeError(f"{where}: unknown fields {sorted(unknown)} (closed schema)")
    missing = keys - set(doc)
    if missing:
        raise RecipeError(f"{where}: missing fields {sorted(missing)}")


def _parse_feature(doc: dict, tree_cache: dict[str, PrefixTree] | None) -> FeatureRule:
    kind = doc.get("kind")
    if kind == "numeric_buckets":
        _take(doc, {"name", "kind", "field", "boundaries"}, f"feature {doc.get('name')}")
        return NumericBuckets(name=doc["name"], field=doc["field"], boundaries=tuple(doc["boundaries"]))
    if kind == "prefix_tree":
        keys = {"name", "kind", "field", "vocab"}
        if "prefixes_hash" in doc:
            _take(doc, keys | {"prefixes_hash"}, f"feature {doc.get('name')}")
            tree = (tree_cache or {}).get(doc["prefixes_hash"])
            if tree is None:
                raise RecipeError(
                    f"feature {doc['name']}: prefix tree hash {doc['prefixes_hash']} "
                    "not resolvable from the local cache"
                )
        else:
            _take(doc, keys | {"prefixes"}, f"feature {doc.get('name')}")
            tree = PrefixTree(tuple(tuple(p) for p in doc["prefixes"]))
        return PrefixTreeRule(name=doc["name"], field=doc["field"], tree=tree, vocab=tuple(doc["vocab"]))
    raise RecipeError(f"unknown feature kind {kind!r}")


def parse_recipe(document: str | bytes | dict, tree_cache: dict[str, PrefixTree] | None = None) -> Recipe:
    """Parse and structurally validate a recipe document (closed schema).

    tree_cache resolves hash-referenced prefix trees against locally cached
    ones; an unresolved hash is a parse error (devices treat it as a denial).
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise RecipeError(f"recipe document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise RecipeError("recipe document must be a JSON object")
    _take(
        doc,
        {"recipe_id", "version", "analysis_id", "query", "non_sensitive_fields", "budgets", "data_content_type"},
        "recipe",
    )
    qdoc = doc["query"]
    if not isinstance(qdoc, dict):
        raise RecipeError("query must be an object")
    _take(qdoc, {"stream", "fields"}, "query")
    bdoc = doc["budgets"]
    _take(bdoc, {"local_epsilon", "aggregate_epsilon", "delta", "min_cohort"}, "budgets")
    cdoc = doc["data_content_type"]
    _take(cdoc, {"features"}, "data_content_type")
    if not isinstance(doc["version"], int):
        raise RecipeError("version must be an integer")
    features = tuple(_parse_feature(f, tree_cache) for f in cdoc["features"])
    return Recipe(
        recipe_id=doc["recipe_id"],
        version=doc["version"],
        analysis_id=doc["analysis_id"],
        query=Query(stream=qdoc["stream"], fields=tuple(qdoc["fields"])),
        non_sensitive_fields=tuple(doc["non_sensitive_fields"]),
        budgets=Budgets(
            local_epsilon=float(bdoc["local_epsilon"]),
            aggregate_epsilon=float(bdoc["aggregate_epsilon"]),
            delta=float(bdoc["delta"]),
            min_cohort=int(bdoc["min_cohort"]),
        ),
        data_content_type=EncodingSpec(features=features),
    )


@dataclass(frozen=True)
class QueryTemplate:
    """One allowed query shape: byte-exact, or a (stream, field-subset) pattern."""

    kind: str
    exact: dict | None = None
    stream: str | None = None
    fields_subset_of: tuple[str, ...] | None = None

    @classmethod
    def exact_match(cls, query: Query) -> "QueryTemplate":
        return cls(kind="exact", exact=query.to_doc())

    @classmethod
    def pattern(cls, stream: str, fields_subset_of: Iterable[str]) -> "QueryTemplate":
        return cls(kind="pattern", stream=stream, fields_subset_of=tuple(fields_subset_of))

    def matches(self, query: Query) -> bool:
        if self.kind == "exact":
            return canonical_json(query.to_doc()) == canonical_json(self.exact)
        if self.kind == "pattern":
            if self.stream not in ("*", query.stream):
                return False
            return set(query.fields) <= set(self.fields_subset_of or ())
        return False

    @classmethod
    def from_doc(cls, doc: dict) -> "QueryTemplate":
        if doc.get("kind") == "exact":
            return cls(kind="exact", exact=doc["query"])
        if doc.get("kind") == "pattern":
            return cls(kind="pattern", stream=doc["stream"], fields_subset_of=tuple(doc["fields_subset_of"]))
        raise RecipeError(f"unknown template kind {doc.get('kind')!r}")


@dataclass(frozen=True)
class AnalysisRules:
    """The device-trusted allowlist for one analysis-id prefix."""

    prefix: str
    allowed_streams: tuple[str, ...]
    allowed_fields: tuple[str, ...]
    templates: tuple[QueryTemplate, ...]


class TrustLookup(Protocol):
    def rules_for(self, analysis_id: str) -> AnalysisRules | None: ...


def verify_query_class(recipe: Recipe, trust: TrustLookup) -> Decision:
    """Approve iff the query reads only allowed fields and matches an allowed template."""
    rules = trust.rules_for(recipe.analysis_id)
    if rules is None:
        return Decision(False, "analysis-prefix-unknown")
    if recipe.query.stream not in rules.allowed_streams:
        return Decision(False, f"stream-not-allowed:{recipe.query.stream}")
    for field in recipe.query.fields:
        if field not in rules.allowed_fields:
            return Decision(False, f"field-not-allowed:{field}")
    if not any(t.matches(recipe.query) for t in rules.templates):
        return Decision(False, "template-mismatch")
    return Decision(True)
