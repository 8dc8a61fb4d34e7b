"""Interpretable-output parsing and the two-round self-reflection protocol."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

from .client import RawResponse, constrained_binary_decode
from .errors import BadPrediction, MissingKey, NoJsonFound, Undecodable
from .prompts import InstructionSet, RenderedPrompt, build_reflection_prompt
from .records import PredictionRecord

REQUIRED_KEYS = ("prediction", "reasoning", "confidence")


@dataclass(frozen=True)
class InterpretableOutput:
    prediction: int
    reasoning: str
    confidence: float
    confidence_clamped: bool = False


@dataclass(frozen=True)
class ReflectionOutcome:
    initial: PredictionRecord
    revised: PredictionRecord
    changed: bool
    rounds: int = 2


def extract_json_object(text: str) -> dict:
    """First balanced top-level JSON object in the text.

    Tolerates surrounding prose and fenced code blocks; scans for '{' and
    tracks string/escape state so braces inside strings do not confuse the
    balance count.
    """
    start = text.find("{")
    while start >= 0:
        depth = 0
        in_string = False
        escaped = False
        for at in range(start, len(text)):
            ch = text[at]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start:at + 1]
                    try:
                        doc = json.loads(candidate)
                    except json.JSONDecodeError:
                        break  # malformed; move on to the next '{'
                    if isinstance(doc, dict):
                        return doc
                    break
        start = text.find("{", start + 1)
    raise NoJsonFound("no balanced JSON object in model output")


def _coerce_prediction(value) -> int:
    if isinstance(value, bool):
        raise BadPrediction(f"prediction {value!r} is not 0 or 1")
    if isinstance(value, (int, float)):
        if value in (0, 1):
            return int(value)
        raise BadPrediction(f"prediction {value!r} outside {{0,1}}")
    if isinstance(value, str) and value.strip() in ("0", "1"):
        return int(value.strip())
    raise BadPrediction(f"prediction {value!r} outside {{0,1}}")


def parse_interpretable(raw: RawResponse | str) -> InterpretableOutput:
    """Parse the {prediction, reasoning, confidence} object out of a reply.

    Total over arbitrary input: failures surface as typed errors, never as
    uncaught exceptions. Confidence is clamped to [0,1] with a flag.
    """
    text = raw.text if isinstance(raw, RawResponse) else raw
    doc = extract_json_object(text)
    for key in REQUIRED_KEYS:
        if key not in doc:
            raise MissingKey(f"missing key {key!r}")
    prediction = _coerce_prediction(doc["prediction"])
    reasoning = doc["reasoning"]
    if not isinstance(reasoning, str):
        reasoning = json.dumps(reasoning)
    confidence_raw = doc["confidence"]
    if isinstance(confidence_raw, bool) or not isinstance(confidence_raw, (int, float, str)):
        raise MissingKey(f"confidence {confidence_raw!r} is not numeric")
    try:
        confidence = float(confidence_raw)
    except ValueError:
        raise MissingKey(f"confidence {confidence_raw!r} is not numeric") from None
    clamped = False
    if confidence < 0.0:
        confidence, clamped = 0.0, True
    elif confidence > 1.0:
        confidence, clamped = 1.0, True
    return InterpretableOutput(
        prediction=prediction,
        reasoning=reasoning,
        confidence=confidence,
        confidence_clamped=clamped,
    )


def run_self_reflection(
    complete_fn: Callable[[RenderedPrompt], RawResponse],
    prompt: RenderedPrompt,
    initial: PredictionRecord,
    instructions: InstructionSet,
) -> ReflectionOutcome:
    """One review round: re-present the prompt with the prior answer.

    If the second reply cannot be decoded, the initial prediction is
    retained (reflection must never destroy a valid prediction).
    """
    if initial.label is None:
        raise ValueError("reflection requires a decoded initial prediction")
    reflection_prompt = build_reflection_prompt(prompt, initial.raw_text, instructions)
    raw = complete_fn(reflection_prompt)
    try:
        label = constrained_binary_decode(raw)
    except Undecodable:
        revised = PredictionRecord(
            target_id=initial.target_id,
            label=initial.label,
            raw_text=raw.text,
            confidence=initial.confidence,
            reasoning=initial.reasoning,
            seed=initial.seed,
            format_desc=initial.format_desc,
            endpoint_desc=initial.endpoint_desc,
            round=2,
        )
        return ReflectionOutcome(initial=initial, revised=revised, changed=False)
    confidence = None
    reasoning = None
    try:
        parsed = parse_interpretable(raw)
        confidence, reasoning = parsed.confidence, parsed.reasoning
    except (NoJsonFound, MissingKey, BadPrediction):
        pass
    revised = PredictionRecord(
        target_id=initial.target_id,
        label=label,
        raw_text=raw.text,
        confidence=confidence,
        reasoning=reasoning,
        seed=initial.seed,
        format_desc=initial.format_desc,
        endpoint_desc=initial.endpoint_desc,
        round=2,
    )
    return ReflectionOutcome(
        initial=initial, revised=revised, changed=revised.label != initial.label
    )
