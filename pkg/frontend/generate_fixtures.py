"""Generate the console's golden API fixtures by driving the real service.

Run from the repository root after installing the package:

    python3 frontend/generate_fixtures.py

Every fixture is a verbatim /v1 response (or, for the extension expectation,
the engine's own recipe document), so the console tests check the client
against exactly what the server produces.
"""

import json
from pathlib import Path

from fastapi.testclient import TestClient

from fedstats.api import AnalystServer, create_app
from fedstats.device import Device, DeviceFleet, DeviceTrustConfig, StreamSchema, TrustEntry
from fedstats.engine import DiscoveryPlan, FrequentSelection, extend_prefixes
from fedstats.randomizers import Mode
from fedstats.recipe import AnalysisRules, Budgets, QueryTemplate

OUT = Path(__file__).parent / "fixtures"

NGRAM_VOCAB = ["a", "you", "doing", "world", "it", "is", "the", "to", "be"]


def write(name: str, doc) -> None:
    OUT.mkdir(exist_ok=True)
    (OUT / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote fixtures/{name}")


def keyboard_trust(budgets: dict, fields=("phrase", "age")) -> DeviceTrustConfig:
    rules = AnalysisRules(
        prefix="keyboard.",
        allowed_streams=("keyboard",),
        allowed_fields=fields,
        templates=(QueryTemplate.pattern("keyboard", fields),),
    )
    return DeviceTrustConfig(
        entries=(TrustEntry(rules=rules, non_sensitive_fields=("locale",), budgets=budgets),)
    )


def generous_budgets(fields=("phrase", "age"), reports=5) -> dict:
    return {
        "analysis": {"allowed_epsilon": 60.0, "allowed_reports": reports, "allowed_delta": 1e-4},
        "fields": {
            f: {"allowed_local_epsilon": 10.0, "allowed_epsilon": 60.0, "allowed_reports": reports}
            for f in fields
        },
    }


def keyboard_fleet(trust: DeviceTrustConfig, events: list[dict]) -> DeviceFleet:
    schema = StreamSchema(
        stream_id="keyboard", fields={"phrase": "string", "age": "number"}, retention=3600.0
    )
    devices = []
    for i, record in enumerate(events):
        device = Device(
            device_id=i,
            trust_config=trust,
            stream_schemas=[schema],
            mode=Mode.SYMMETRIC,
            attributes={"locale": "en_US"},
        )
        device.ingest_event("keyboard", record, now=0.0)
        devices.append(device)
    return DeviceFleet(devices, fleet_seed=42)


def plan_doc(analysis_id: str, **overrides) -> dict:
    doc = {
        "analysis_id": analysis_id,
        "stream": "keyboard",
        "field": "phrase",
        "vocab": NGRAM_VOCAB,
        "max_ngram_len": 3,
        "tau": 3.0,
        "round_budgets": {
            "local_epsilon": 8.0,
            "aggregate_epsilon": 17.0,
            "delta": 1e-6,
            "min_cohort": 5,
        },
        "total_epsilon": 60.0,
        "total_delta": 1e-4,
    }
    doc.update(overrides)
    return doc


def golden_recipe_doc(min_cohort=5) -> dict:
    return {
        "recipe_id": "keyboard.ngrams-age-r1",
        "version": 1,
        "analysis_id": "keyboard.ngrams",
        "query": {"stream": "keyboard", "fields": ["age", "phrase"]},
        "non_sensitive_fields": [],
        "budgets": {
            "local_epsilon": 8.0,
            "aggregate_epsilon": 17.0,
            "delta": 1e-6,
            "min_cohort": min_cohort,
        },
        "data_content_type": {
            "features": [
                {
                    "name": "age",
                    "kind": "numeric_buckets",
                    "field": "age",
                    "boundaries": [20, 30, 40, 50, 60, 70, 80, 90],
                },
                {
                    "name": "ngram",
                    "kind": "prefix_tree",
                    "field": "phrase",
                    "prefixes": [["hello", "world"], ["i", "got"], ["how", "are"]],
                    "vocab": NGRAM_VOCAB,
                },
            ]
        },
    }


def make_272_bin_fixtures() -> None:
    trust = keyboard_trust(generous_budgets())
    fleet = keyboard_fleet(
        trust,
        [
            {"phrase": "hello world a", "age": 25},
            {"phrase": "i got you", "age": 34},
            {"phrase": "how are you doing", "age": 47},
            {"phrase": "hello world it is", "age": 62},
            {"phrase": "something else entirely", "age": 19},
        ],
    )
    server = AnalystServer(fleet, trust, global_max_epsilon=100.0, synchronous=True)
    client = TestClient(create_app(server))
    assert client.post("/v1/analyses", json=plan_doc("keyboard.ngrams")).status_code == 201
    token = client.post(
        "/v1/analyses/keyboard.ngrams/rounds", json={"recipe": golden_recipe_doc()}
    ).json()["round_token"]
    round_doc = client.get(f"/v1/analyses/keyboard.ngrams/rounds/{token}").json()
    assert round_doc["status"] == "published", round_doc
    assert len(round_doc["result"]["labels"]) == 272
    write("round_published_272.json", round_doc)

    gated_token = client.post(
        "/v1/analyses/keyboard.ngrams/rounds", json={"recipe": golden_recipe_doc(min_cohort=50) | {"recipe_id": "keyboard.ngrams-age-r2"}}
    ).json()["round_token"]
    gated_doc = client.get(f"/v1/analyses/keyboard.ngrams/rounds/{gated_token}").json()
    assert gated_doc["status"] == "gated"
    write("round_gated.json", gated_doc)


def make_unigram_state_fixture() -> None:
    trust = keyboard_trust(generous_budgets())
    fleet = keyboard_fleet(
        trust,
        [
            {"phrase": "hello world", "age": 25},
            {"phrase": "hello world", "age": 30},
            {"phrase": "hello you", "age": 41},
            {"phrase": "world is", "age": 52},
            {"phrase": "hello world", "age": 66},
        ],
    )
    server = AnalystServer(fleet, trust, global_max_epsilon=100.0, synchronous=True)
    client = TestClient(create_app(server))
    plan = plan_doc("keyboard.unigrams", vocab=["hello", "world", "you", "is"])
    assert client.post("/v1/analyses", json=plan).status_code == 201
    client.post("/v1/analyses/keyboard.unigrams/rounds", json={"auto_extend": True})
    state = client.get("/v1/analyses/keyboard.unigrams/state").json()
    assert state["accepted"], state
    write("state_after_round1.json", state)


def make_table1_budget_fixtures() -> None:
    from fedstats.accountant import table1_example_config

    fields = ("ngram", "bucketed_age", "model_perplexity")
    trust = keyboard_trust(table1_example_config(), fields=fields)
    schema = StreamSchema(stream_id="keyboard", fields={"ngram": "string"}, retention=3600.0)
    device = Device(device_id=0, trust_config=trust, stream_schemas=[schema], mode=Mode.ASYMMETRIC)
    device.ingest_event("keyboard", {"ngram": "hello world a"}, now=0.0)
    fleet = DeviceFleet([device], fleet_seed=1)
    server = AnalystServer(fleet, trust, global_max_epsilon=100.0, synchronous=True)
    client = TestClient(create_app(server))
    plan = plan_doc(
        "keyboard.table1",
        field="ngram",
        round_budgets={
            "local_epsilon": 5.0,
            "aggregate_epsilon": 0.3,
            "delta": 1e-6,
            "min_cohort": 581387,
        },
        total_epsilon=0.5,
        total_delta=1e-6,
        max_ngram_len=1,
    )
    assert client.post("/v1/analyses", json=plan).status_code == 201
    write("budget_table1_fresh.json", client.get("/v1/analyses/keyboard.table1/budget").json())
    # a single-device cohort cannot cross m, but the device still charges
    client.post("/v1/analyses/keyboard.table1/rounds", json={"auto_extend": True})
    used = client.get("/v1/analyses/keyboard.table1/budget").json()
    assert used["analysis"]["used_epsilon"] == 0.3
    write("budget_table1_used.json", used)


def make_extension_fixture() -> None:
    plan = DiscoveryPlan(
        analysis_id="keyboard.ngrams",
        stream="keyboard",
        field="phrase",
        vocab=tuple(NGRAM_VOCAB),
        max_ngram_len=3,
        round_budgets=Budgets(
            local_epsilon=8.0, aggregate_epsilon=17.0, delta=1e-6, min_cohort=5
        ),
        total_epsilon=60.0,
        total_delta=1e-4,
    )
    # round-2 accepted bins (1-gram prefix, next word): extending the frequent
    # 2-grams "hello world" and "i got" yields the 3-gram round's recipe
    selection = FrequentSelection(
        bins=(),
        extendable=((("hello",), "world", 120.0), (("i",), "got", 90.0)),
        terminal=(),
    )
    recipe = extend_prefixes(selection, plan, next_length=3)
    write(
        "extend_expected.json",
        {
            "selected_prefixes": [["hello", "world"], ["i", "got"]],
            "vocab": NGRAM_VOCAB,
            "engine_recipe": recipe.to_doc(),
            "engine_total_bins": recipe.total_bins,
        },
    )


def make_submit_scenarios() -> None:
    scenarios = []

    def record(name, client, analysis_id, body, session, plan):
        ledger_before = ledger_of(client, analysis_id)  # state at submit time
        response = client.post(f"/v1/analyses/{analysis_id}/rounds", json=body)
        code = response.status_code
        error = response.json().get("error", {}).get("code") if code >= 400 else None
        scenarios.append(
            {
                "name": name,
                "session_status": session,
                "plan": plan,
                "ledger_entries": ledger_before,
                "body": body,
                "expected_status": code,
                "error_code": error,
            }
        )
        return response

    def ledger_of(client, analysis_id):
        return client.get(f"/v1/analyses/{analysis_id}/state").json()["ledger"]["entries"]

    def fresh_server(reports=5):
        trust = keyboard_trust(generous_budgets(reports=reports))
        fleet = keyboard_fleet(
            trust,
            [{"phrase": "hello world", "age": 25} for _ in range(5)],
        )
        server = AnalystServer(fleet, trust, global_max_epsilon=100.0, synchronous=True)
        return TestClient(create_app(server))

    unigram_plan = plan_doc("keyboard.unigrams", vocab=["hello", "world"], max_ngram_len=2)

    # over the per-round budget while idle -> 403
    client = fresh_server()
    client.post("/v1/analyses", json=unigram_plan)
    over = golden_recipe_doc()
    over["analysis_id"] = "keyboard.unigrams"
    over["budgets"]["aggregate_epsilon"] = 18.0
    record("over-round-budget", client, "keyboard.unigrams", {"recipe": over}, "idle", unigram_plan)

    # within budget while idle -> 202
    record("idle-ok", client, "keyboard.unigrams", {"auto_extend": True}, "idle", unigram_plan)

    # second auto-extend reaches max length -> done; submitting again -> 403
    record("idle-ok-2", client, "keyboard.unigrams", {"auto_extend": True}, "idle", unigram_plan)
    status = client.get("/v1/analyses/keyboard.unigrams/state").json()["status"]
    assert status == "done", status
    record("analysis-done", client, "keyboard.unigrams", {"auto_extend": True}, "done", unigram_plan)

    # a plan whose total allows exactly one round -> exhausted -> 403
    client = fresh_server()
    tight = plan_doc(
        "keyboard.unigrams", vocab=["hello", "world"], total_epsilon=17.0, max_ngram_len=3
    )
    client.post("/v1/analyses", json=tight)
    record("tight-first", client, "keyboard.unigrams", {"auto_extend": True}, "idle", tight)
    status = client.get("/v1/analyses/keyboard.unigrams/state").json()["status"]
    assert status == "exhausted", status
    record("analysis-exhausted", client, "keyboard.unigrams", {"auto_extend": True}, "exhausted", tight)

    write("submit_scenarios.json", scenarios)


if __name__ == "__main__":
    make_272_bin_fixtures()
    make_unigram_state_fixture()
    make_table1_budget_fixtures()
    make_extension_fixture()
    make_submit_scenarios()
    print("done")
