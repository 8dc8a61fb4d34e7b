"""Chat JSONL loading, validation, and token-level rendering.

The input format is one JSON object per line:
{"messages": [{"role", "content"}, ...], "label": 0|1, "meta": {...}}
with a final assistant message whose text is exactly "0"/"1" or a JSON
object whose "prediction" equals the label. The diagnosis digit sits at a
fixed, recoverable position inside the final assistant message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataInvalid
from .tokenizer import ByteTokenizer

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatRecord:
    messages: tuple[dict, ...]
    label: int
    meta: dict

    @property
    def completion(self) -> str:
        return self.messages[-1]["content"]

    def label_digit_offset(self) -> int:
        """Character offset of the diagnosis digit inside the completion."""
        text = self.completion
        if text in ("0", "1"):
            return 0
        doc = json.loads(text)
        digit = str(doc["prediction"])
        at = text.find(f'"prediction":{digit}')
        if at < 0:
            at = text.find(f'"prediction": {digit}')
            if at < 0:
                raise ValueError(f"cannot locate the prediction digit in {text!r}")
            return at + len('"prediction": ')
        return at + len('"prediction":')


def _check_final_assistant(text: str, label: int, line: int) -> None:
    if text in ("0", "1"):
        if text != str(label):
            raise DataInvalid(line, f"assistant text {text!r} != label {label}")
        return
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        raise DataInvalid(line, f"assistant text is neither a bare label nor JSON: {text[:60]!r}") from None
    if not isinstance(doc, dict) or doc.get("prediction") != label:
        raise DataInvalid(line, f"assistant JSON prediction != label {label}")


def load_chat_jsonl(path: str | Path) -> list[ChatRecord]:
    """Parse and validate a corpus; raises DataInvalid naming the bad line."""
    records: list[ChatRecord] = []
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for number, line in enumerate(lines, start=1):
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataInvalid(number, f"not JSON: {exc}") from None
        messages = doc.get("messages")
        label = doc.get("label")
        if not isinstance(messages, list) or not messages:
            raise DataInvalid(number, "missing or empty messages")
        for message in messages:
            if not isinstance(message, dict) or message.get("role") not in ROLES:
                raise DataInvalid(number, f"bad message entry: {message!r}")
            if not isinstance(message.get("content"), str):
                raise DataInvalid(number, "message content must be a string")
        if label not in (0, 1):
            raise DataInvalid(number, f"label {label!r} outside {{0,1}}")
        if messages[-1]["role"] != "assistant":
            raise DataInvalid(number, "final message must be an assistant turn")
        _check_final_assistant(messages[-1]["content"], label, number)
        records.append(
            ChatRecord(messages=tuple(messages), label=label, meta=doc.get("meta", {}))
        )
    return records


@dataclass(frozen=True)
class EncodedExample:
    tokens: list[int]            # full sequence incl. completion and EOS
    completion_start: int        # first token index belonging to the completion
    label_token_index: int       # index of the diagnosis digit token
    gold_token: int


def encode_record(record: ChatRecord, tokenizer: ByteTokenizer, max_len: int) -> EncodedExample:
    """Render the chat to tokens; completion tokens carry the loss.

    If the rendered sequence exceeds max_len it is truncated on the left
    (the completion end, where the diagnosis token lives, is always kept).
    """
    prompt_text = tokenizer.render_prompt(record.messages[:-1])
    completion_text = record.completion
    prompt_tokens = tokenizer.encode(prompt_text)
    completion_tokens = tokenizer.encode(completion_text) + [tokenizer.eos_id]
    tokens = prompt_tokens + completion_tokens
    completion_start = len(prompt_tokens)
    digit_tokens = len(tokenizer.encode(completion_text[: record.label_digit_offset()]))
    label_token_index = completion_start + digit_tokens
    if len(tokens) > max_len:
        cut = len(tokens) - max_len
        if cut > completion_start:
            raise ValueError("completion alone exceeds the model context")
        tokens = tokens[cut:]
        completion_start -= cut
        label_token_index -= cut
    return EncodedExample(
        tokens=tokens,
        completion_start=completion_start,
        label_token_index=label_token_index,
        gold_token=tokens[label_token_index],
    )
