"""Tests for the simulated device pipeline."""

import hashlib
import json

import numpy as np
import pytest

from conftest import KEYBOARD_STREAM, keyboard_trust, make_device, unigram_recipe
from fedstats.aggregation import decode_share
from fedstats.device import Device, DeviceError, extract_candidates
from fedstats.randomizers import Mode, OneHotVector, randomize
from fedstats.recipe import (
    Budgets,
    EncodingSpec,
    PrefixTree,
    PrefixTreeRule,
    Query,
    Recipe,
)

VOCAB = ("hello", "world", "again")


def reconstruct_bits(response) -> np.ndarray:
    a = decode_share(response.shares[0])
    b = decode_share(response.shares[1])
    return (a.coords + b.coords).astype(np.uint8)


def test_ingest_and_schema_validation():
    device = make_device(0, [])
    device.ingest_event("keyboard", {"phrase": "hi there", "age": 40}, now=0.0)
    with pytest.raises(DeviceError, match="must be a string"):
        device.ingest_event("keyboard", {"phrase": 7, "age": 40}, now=0.0)
    with pytest.raises(DeviceError, match="unknown fields"):
        device.ingest_event("keyboard", {"phrase": "x", "age": 1, "secret": 1}, now=0.0)
    with pytest.raises(DeviceError, match="unknown stream"):
        device.ingest_event("microphone", {"phrase": "x"}, now=0.0)


def test_retention_expiry_at_next_access():
    device = make_device(0, [])
    device.ingest_event("keyboard", {"phrase": "old news", "age": 20}, now=0.0)
    stream = device.streams["keyboard"]
    assert stream.records_at(3600.0)  # still alive at the boundary
    assert stream.records_at(3601.0) == []


def test_unigram_recipe_end_to_end_fixed_seed_oracle():
    # device typed "hello"; the emitted shares must reconstruct to exactly the
    # privatized one-hot at bin("hello") that the plain pipeline produces
    device = make_device(1, ["hello"])
    recipe = unigram_recipe(VOCAB)
    response = device.handle_recipe(recipe, now=1.0, rng=np.random.default_rng(99))
    assert response.emitted and not response.random_report
    bits = reconstruct_bits(response)

    spec = recipe.data_content_type
    hot = spec.encode_event({"phrase": ("hello",)})
    assert hot == 3  # global OOV, end-token, leaf-OOV, then vocab order
    oracle_rng = np.random.default_rng(99)
    expected = randomize(
        OneHotVector(domain_size=spec.total_bins, hot_index=hot), 8.0, Mode.SYMMETRIC, oracle_rng
    )
    assert bits.tolist() == expected.bits.tolist()


def test_denied_recipe_logs_audit_and_charges_nothing():
    device = make_device(2, ["hello"])
    recipe = unigram_recipe(VOCAB)
    bad = Recipe(
        recipe_id="keyboard.bad",
        version=1,
        analysis_id="keyboard.unigrams",
        query=Query(stream="keyboard", fields=("phrase", "raw_text")),
        non_sensitive_fields=(),
        budgets=recipe.budgets,
        data_content_type=recipe.data_content_type,
    )
    before = device.budget_snapshot()
    response = device.handle_recipe(bad, now=1.0, rng=np.random.default_rng(0))
    assert response.kind == "denied"
    assert response.reason == "field-not-allowed:raw_text"
    assert device.budget_snapshot() == before
    assert device.audit[-1].decision == "denied"
    assert device.audit[-1].failing_check == "field-not-allowed:raw_text"
    assert device.audit[-1].share_hashes is None


def test_no_matching_event_sends_random_report_and_charges():
    # phrases with no vocab overlap still match a depth-0 tree, so use a
    # depth-1 tree the device's phrase cannot match
    tree = PrefixTreeRule(
        name="bigram", field="phrase", tree=PrefixTree((("hello",),)), vocab=VOCAB
    )
    recipe = Recipe(
        recipe_id="keyboard.bigrams-r1",
        version=1,
        analysis_id="keyboard.bigrams",
        query=Query(stream="keyboard", fields=("phrase",)),
        non_sensitive_fields=(),
        budgets=Budgets(local_epsilon=8.0, aggregate_epsilon=17.0, delta=1e-6, min_cohort=3),
        data_content_type=EncodingSpec(features=(tree,)),
    )
    device = make_device(3, ["completely different words"])
    before = device.budget_snapshot()
    response = device.handle_recipe(recipe, now=1.0, rng=np.random.default_rng(5))
    assert response.emitted and response.random_report
    after = device.budget_snapshot()
    assert after != before
    assert after["keyboard."]["analysis"]["used_reports"] == 1
    assert device.audit[-1].random_report


def test_budget_exhaustion_denies_second_recipe():
    trust = keyboard_trust(allowed_reports=1)
    device = make_device(4, ["hello"], trust)
    recipe = unigram_recipe(VOCAB)
    assert device.handle_recipe(recipe, 1.0, np.random.default_rng(1)).emitted
    again = unigram_recipe(VOCAB, recipe_id="keyboard.unigrams-r2")
    response = device.handle_recipe(again, 2.0, np.random.default_rng(2))
    assert response.reason == "analysis-reports"
    # deny is free: only the one approved charge is visible
    assert device.budget_snapshot()["keyboard."]["analysis"]["used_reports"] == 1


def test_min_cohort_check_denies_small_m():
    device = make_device(5, ["hello"])
    # the Renyi route certifies ~16.05 at eps0=8 for m=1; requesting 10 fails
    recipe = unigram_recipe(VOCAB, min_cohort=1, aggregate_epsilon=10.0)
    response = device.handle_recipe(recipe, 1.0, np.random.default_rng(1))
    assert response.reason == "min-cohort"


def test_min_cohort_floor_takes_maximum():
    trust = keyboard_trust(min_cohort_floor=5)
    device = make_device(6, ["hello"], trust)
    recipe = unigram_recipe(VOCAB, min_cohort=3, aggregate_epsilon=17.0)
    response = device.handle_recipe(recipe, 1.0, np.random.default_rng(1))
    assert response.emitted
    assert response.min_cohort == 5
    assert device.audit[-1].min_cohort == 5


def test_not_opted_in_denies():
    device = make_device(7, ["hello"])
    device.opted_in = False
    response = device.handle_recipe(unigram_recipe(VOCAB), 1.0, np.random.default_rng(1))
    assert response.reason == "not-opted-in"


def test_non_sensitive_field_routing():
    device = make_device(8, ["hello"])
    recipe = unigram_recipe(VOCAB)
    ok = Recipe(
        recipe_id=recipe.recipe_id,
        version=1,
        analysis_id=recipe.analysis_id,
        query=recipe.query,
        non_sensitive_fields=("locale",),
        budgets=recipe.budgets,
        data_content_type=recipe.data_content_type,
    )
    response = device.handle_recipe(ok, 1.0, np.random.default_rng(1))
    assert response.emitted
    assert response.clear_metadata == {"locale": "en_US"}
    bad = Recipe(
        recipe_id="keyboard.unigrams-r2",
        version=1,
        analysis_id=recipe.analysis_id,
        query=recipe.query,
        non_sensitive_fields=("age",),  # not in the registry
        budgets=recipe.budgets,
        data_content_type=recipe.data_content_type,
    )
    response = device.handle_recipe(bad, 2.0, np.random.default_rng(2))
    assert response.reason == "non-sensitive-field:age"


def test_every_egress_has_matching_audit_record():
    device = make_device(9, ["hello world", "hello again"])
    recipe = unigram_recipe(VOCAB)
    responses = []
    for i in range(3):
        r = device.handle_recipe(
            unigram_recipe(VOCAB, recipe_id=f"keyboard.unigrams-r{i}"),
            float(i),
            np.random.default_rng(i),
        )
        responses.append(r)
    emitted = [r for r in responses if r.emitted]
    approved = [a for a in device.export_audit() if a.decision == "approved"]
    assert len(emitted) == len(approved)
    for r, a in zip(emitted, approved):
        assert a.share_hashes == (
            hashlib.sha256(r.shares[0]).hexdigest(),
            hashlib.sha256(r.shares[1]).hexdigest(),
        )
        assert hashlib.sha256(reconstruct_bits(r).tobytes()).hexdigest() == a.report_hash


def test_audit_jsonl_export():
    device = make_device(10, ["hello"])
    device.handle_recipe(unigram_recipe(VOCAB), 1.0, np.random.default_rng(1))
    lines = device.export_audit_jsonl().splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert doc["decision"] == "approved"
    assert doc["recipe_id"] == "keyboard.unigrams-r1"
    assert doc["min_cohort"] == 3


def test_retention_hides_expired_events_from_queries():
    device = make_device(11, [])
    device.ingest_event("keyboard", {"phrase": "hello", "age": 30}, now=0.0)
    response = device.handle_recipe(
        unigram_recipe(VOCAB), now=10_000.0, rng=np.random.default_rng(1)
    )
    # the only event expired, so the device answers with a random report
    assert response.emitted and response.random_report


def test_candidate_extraction_rules():
    spec = unigram_recipe(VOCAB).data_content_type
    cands = extract_candidates({"phrase": "hello world"}, spec)
    assert [c["phrase"] for c in cands] == [("hello",), ("world",)]
    bigram = EncodingSpec(
        features=(
            PrefixTreeRule(
                name="bg", field="phrase", tree=PrefixTree((("hello",), ("big",))), vocab=VOCAB
            ),
        )
    )
    cands = extract_candidates({"phrase": "hello world big"}, bigram)
    # window "hello world" matches leaf hello; trailing "big" is a terminal leaf
    assert [c["phrase"] for c in cands] == [("hello", "world"), ("big",)]
    assert extract_candidates({"phrase": "nothing matches here"}, bigram) == []


def test_unparseable_recipe_document_denied():
    device = make_device(12, ["hello"])
    response = device.handle_recipe_document("{not json", 1.0, np.random.default_rng(1))
    assert response.kind == "denied"
    assert response.reason.startswith("recipe-parse:")
