import random

import pytest

from golden_helpers import all_combination_prompts
from tabshot.client import MockEndpoint, MockRule, RawResponse
from tabshot.errors import BadPrediction, MissingKey, NoJsonFound, TabshotError
from tabshot.interpret import (
    ReflectionOutcome,
    extract_json_object,
    parse_interpretable,
    run_self_reflection,
)
from tabshot.prompts import load_instructions
from tabshot.records import PredictionRecord


def test_parse_plain_object():
    out = parse_interpretable('{"prediction":1,"reasoning":"low hippocampal volume","confidence":0.82}')
    assert out.prediction == 1
    assert out.reasoning == "low hippocampal volume"
    assert out.confidence == 0.82
    assert not out.confidence_clamped


def test_parse_fenced_with_clamp():
    text = 'Sure! ```{"prediction":"0","reasoning":"...","confidence":1.4}```'
    out = parse_interpretable(text)
    assert out.prediction == 0
    assert out.confidence == 1.0
    assert out.confidence_clamped


def test_parse_negative_confidence_clamps():
    out = parse_interpretable('{"prediction":0,"reasoning":"","confidence":-0.2}')
    assert out.confidence == 0.0
    assert out.confidence_clamped


def test_bad_prediction_values():
    with pytest.raises(BadPrediction):
        parse_interpretable('{"prediction":2,"reasoning":"","confidence":0.5}')
    with pytest.raises(BadPrediction):
        parse_interpretable('{"prediction":true,"reasoning":"","confidence":0.5}')
    with pytest.raises(BadPrediction):
        parse_interpretable('{"prediction":"yes","reasoning":"","confidence":0.5}')


def test_missing_keys():
    with pytest.raises(MissingKey):
        parse_interpretable('{"prediction":1,"confidence":0.5}')
    with pytest.raises(MissingKey):
        parse_interpretable('{"prediction":1,"reasoning":"x","confidence":"high"}')


def test_no_json_found():
    with pytest.raises(NoJsonFound):
        parse_interpretable("The patient seems fine to me.")
    with pytest.raises(NoJsonFound):
        parse_interpretable("{broken json")


def test_extracts_first_balanced_object_amid_prose():
    text = 'Notes {not json} then {"prediction": 1, "reasoning": "{x}", "confidence": 0.7} end'
    doc = extract_json_object(text)
    assert doc["prediction"] == 1
    assert doc["reasoning"] == "{x}"


def test_parser_total_on_arbitrary_bytes():
    rng = random.Random(0)
    for _ in range(500):
        length = rng.randrange(0, 80)
        text = "".join(chr(rng.randrange(1, 0x2FF)) for _ in range(length))
        try:
            parse_interpretable(text)
        except TabshotError:
            pass  # typed errors only, never a crash


def _record(label, raw="1"):
    return PredictionRecord(target_id="tgt01", label=label, raw_text=raw)


def test_reflection_keeps_same_answer():
    prompt = all_combination_prompts()["tabular_few_standard"]
    outcome = run_self_reflection(
        lambda p: RawResponse(text="1"), prompt, _record(1), load_instructions()
    )
    assert isinstance(outcome, ReflectionOutcome)
    assert outcome.changed is False
    assert outcome.revised.label == 1
    assert outcome.revised.round == 2


def test_reflection_revises_answer():
    prompt = all_combination_prompts()["tabular_few_standard"]
    reply = '{"prediction":0,"reasoning":"reconsidered","confidence":0.6}'
    outcome = run_self_reflection(
        lambda p: RawResponse(text=reply), prompt, _record(1), load_instructions()
    )
    assert outcome.changed is True
    assert outcome.revised.label == 0
    assert outcome.revised.confidence == 0.6


def test_reflection_failsafe_on_gibberish():
    prompt = all_combination_prompts()["tabular_few_standard"]
    outcome = run_self_reflection(
        lambda p: RawResponse(text="???"), prompt, _record(1), load_instructions()
    )
    assert outcome.changed is False
    assert outcome.revised.label == 1


def test_reflection_requires_decoded_initial():
    prompt = all_combination_prompts()["tabular_few_standard"]
    with pytest.raises(ValueError):
        run_self_reflection(
            lambda p: RawResponse(text="1"), prompt, _record(None), load_instructions()
        )


def test_reflection_prompt_embeds_prior_and_table():
    captured = {}

    def fake_complete(p):
        captured["messages"] = p.messages
        return RawResponse(text="1")

    prompt = all_combination_prompts()["tabular_few_standard"]
    run_self_reflection(fake_complete, prompt, _record(1, raw="1"), load_instructions())
    roles = [m.role for m in captured["messages"]]
    assert roles == ["system", "user", "assistant", "user"]
    assert captured["messages"][2].content == "1"
    assert "| tgt01 |" in captured["messages"][1].content


def test_mock_endpoint_reflection_flip_rate_zero():
    # the deterministic mock gives the same answer in both rounds
    endpoint = MockEndpoint(rule=MockRule("age", 60.0))
    prompt = all_combination_prompts()["tabular_few_standard"]
    initial_raw = endpoint.complete(prompt)
    initial = _record(int(initial_raw.text), raw=initial_raw.text)
    flips = []
    for _ in range(10):
        outcome = run_self_reflection(endpoint.complete, prompt, initial, load_instructions())
        flips.append(outcome.changed)
    assert sum(flips) == 0
