"""Chat-format fine-tuning corpora (JSONL) and their validation.

Each record is the rendered prompt plus a final assistant message carrying
the diagnosis token in a fixed position: exactly "0"/"1" for the standard
variant, or a canonical JSON answer whose prediction equals the label for
the interpretable variant. The writer refuses malformed or leaking records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable

from .errors import InvariantViolation
from .prompts import Message, RenderedPrompt, leaks_target_label

LABEL_TEXTS = ("0", "1")


def canonical_interpretable_answer(label: int) -> str:
    """Label-only JSON training target (reasoning deliberately empty)."""
    return json.dumps(
        {"prediction": label, "reasoning": "", "confidence": 1.0},
        separators=(",", ":"),
    )


@dataclass(frozen=True)
class FinetuneRecord:
    messages: tuple[Message, ...]
    label: int
    meta: dict = field(default_factory=dict)

    @staticmethod
    def from_prompt(prompt: RenderedPrompt, label: int, meta: dict | None = None) -> "FinetuneRecord":
        if prompt.format.variant == "interpretable":
            answer = canonical_interpretable_answer(label)
        else:
            answer = str(label)
        merged = {"target_id": prompt.target_id, "format": prompt.format.describe()}
        merged.update(meta or {})
        return FinetuneRecord(
            messages=(*prompt.messages, Message(role="assistant", content=answer)),
            label=label,
            meta=merged,
        )


def _check_assistant_text(text: str, label: int) -> str | None:
    """None if valid, else a failure description."""
    if text in LABEL_TEXTS:
        return None if text == str(label) else f"assistant text {text!r} != label {label}"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return f"assistant text {text!r} is neither a bare label nor JSON"
    if not isinstance(doc, dict) or "prediction" not in doc:
        return "assistant JSON lacks a prediction key"
    if doc["prediction"] != label:
        return f"assistant JSON prediction {doc['prediction']!r} != label {label}"
    return None


def _structure_of(record_messages: Iterable) -> str:
    texts = [
        (m.content if isinstance(m, Message) else m["content"])
        for m in record_messages
        if (m.role if isinstance(m, Message) else m["role"]) == "user"
    ]
    return "tabular" if any(line.startswith("| ") for t in texts for line in t.splitlines()) else "serialized"


def validate_record(record: FinetuneRecord) -> None:
    """Raise InvariantViolation for malformed or label-leaking records."""
    if record.label not in (0, 1):
        raise InvariantViolation(f"label must be 0 or 1, got {record.label!r}")
    if not record.messages or record.messages[-1].role != "assistant":
        raise InvariantViolation("final message must be an assistant turn")
    failure = _check_assistant_text(record.messages[-1].content, record.label)
    if failure:
        raise InvariantViolation(failure)
    structure = _structure_of(record.messages)
    if leaks_target_label(record.messages, structure, record.label):
        raise InvariantViolation(f"record for {record.meta.get('target_id')!r} leaks its label")


def export_chat_jsonl(records: Iterable[FinetuneRecord], sink: IO[bytes]) -> int:
    """Write records as UTF-8 JSON lines with fixed key order; returns count."""
    count = 0
    for record in records:
        validate_record(record)
        doc = {
            "messages": [{"role": m.role, "content": m.content} for m in record.messages],
            "label": record.label,
            "meta": record.meta,
        }
        line = json.dumps(doc, ensure_ascii=False, separators=(",", ":"))
        sink.write(line.encode("utf-8") + b"\n")
        count += 1
    return count


@dataclass
class ValidationReport:
    n_lines: int = 0
    parse_failures: list = field(default_factory=list)   # (line number, message)
    invariant_failures: list = field(default_factory=list)
    leakage_failures: list = field(default_factory=list)
    label_counts: dict = field(default_factory=lambda: {0: 0, 1: 0})

    @property
    def passed(self) -> bool:
        return not (self.parse_failures or self.invariant_failures or self.leakage_failures)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: {self.n_lines} lines, labels {self.label_counts}, "
            f"{len(self.parse_failures)} parse / {len(self.invariant_failures)} invariant / "
            f"{len(self.leakage_failures)} leakage failures"
        )


def validate_jsonl(source: IO[bytes] | bytes | str) -> ValidationReport:
    """Line-by-line structural, label, and leakage validation."""
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str):
        data = source.encode("utf-8")
    else:
        data = source.read()
    report = ValidationReport()
    text = data.decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for number, line in enumerate(lines, start=1):
        report.n_lines += 1
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            report.parse_failures.append((number, str(exc)))
            continue
        try:
            messages = doc["messages"]
            label = doc["label"]
            if label not in (0, 1):
                raise KeyError(f"label {label!r} outside {{0,1}}")
            if not messages or messages[-1]["role"] != "assistant":
                raise KeyError("final message is not an assistant turn")
        except (KeyError, TypeError, IndexError) as exc:
            report.invariant_failures.append((number, f"bad structure: {exc}"))
            continue
        failure = _check_assistant_text(messages[-1]["content"], label)
        if failure:
            report.invariant_failures.append((number, failure))
            continue
        report.label_counts[label] += 1
        if leaks_target_label(messages, _structure_of(messages), label):
            report.leakage_failures.append((number, "label visible in target position"))
    return report
