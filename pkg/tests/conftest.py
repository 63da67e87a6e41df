"""Shared builders for device/engine/api tests: a toy keyboard fleet."""

import pytest

from fedstats.device import Device, DeviceTrustConfig, StreamSchema, TrustEntry
from fedstats.randomizers import Mode
from fedstats.recipe import (
    AnalysisRules,
    Budgets,
    EncodingSpec,
    PrefixTree,
    PrefixTreeRule,
    Query,
    QueryTemplate,
    Recipe,
)

KEYBOARD_STREAM = StreamSchema(
    stream_id="keyboard", fields={"phrase": "string", "age": "number"}, retention=3600.0
)


def keyboard_trust(
    *,
    allowed_epsilon: float = 60.0,
    allowed_delta: float = 1e-4,
    allowed_reports: int = 5,
    allowed_local: float = 10.0,
    min_cohort_floor: int = 1,
) -> DeviceTrustConfig:
    fields = ("phrase", "age")
    budgets = {
        "analysis": {
            "allowed_epsilon": allowed_epsilon,
            "allowed_reports": allowed_reports,
            "allowed_delta": allowed_delta,
        },
        "fields": {
            f: {
                "allowed_local_epsilon": allowed_local,
                "allowed_epsilon": allowed_epsilon,
                "allowed_reports": allowed_reports,
            }
            for f in fields
        },
    }
    rules = AnalysisRules(
        prefix="keyboard.",
        allowed_streams=("keyboard",),
        allowed_fields=fields,
        templates=(QueryTemplate.pattern("keyboard", fields),),
    )
    entry = TrustEntry(
        rules=rules,
        non_sensitive_fields=("locale",),
        budgets=budgets,
        min_cohort_floor=min_cohort_floor,
    )
    return DeviceTrustConfig(entries=(entry,))


def unigram_recipe(
    vocab: tuple[str, ...],
    *,
    recipe_id: str = "keyboard.unigrams-r1",
    local_epsilon: float = 8.0,
    aggregate_epsilon: float = 17.0,
    delta: float = 1e-6,
    min_cohort: int = 3,
) -> Recipe:
    rule = PrefixTreeRule(name="word", field="phrase", tree=PrefixTree(((),)), vocab=vocab)
    return Recipe(
        recipe_id=recipe_id,
        version=1,
        analysis_id="keyboard.unigrams",
        query=Query(stream="keyboard", fields=("phrase",)),
        non_sensitive_fields=(),
        budgets=Budgets(
            local_epsilon=local_epsilon,
            aggregate_epsilon=aggregate_epsilon,
            delta=delta,
            min_cohort=min_cohort,
        ),
        data_content_type=EncodingSpec(features=(rule,)),
    )


def make_device(
    device_id: int,
    phrases: list[str],
    trust: DeviceTrustConfig | None = None,
    *,
    mode: Mode = Mode.SYMMETRIC,
    now: float = 0.0,
) -> Device:
    device = Device(
        device_id=device_id,
        trust_config=trust or keyboard_trust(),
        stream_schemas=[KEYBOARD_STREAM],
        mode=mode,
        attributes={"locale": "en_US"},
    )
    for phrase in phrases:
        device.ingest_event("keyboard", {"phrase": phrase, "age": 30}, now)
    return device


@pytest.fixture
def trust():
    return keyboard_trust()
