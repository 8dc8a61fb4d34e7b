"""Byte-level tokenizer with a fixed chat rendering.

Ids 0..255 are raw bytes; 256 is EOS. The diagnosis digits "0"/"1" are the
single byte tokens 48/49, which is what makes one-token constrained
decoding (and logit bias on ids 48/49) work.
"""

from __future__ import annotations

from typing import Iterable

EOS_ID = 256
VOCAB_SIZE = 257

ROLE_TAGS = {"system": "<|system|>", "user": "<|user|>", "assistant": "<|assistant|>"}


class ByteTokenizer:
    eos_id = EOS_ID
    vocab_size = VOCAB_SIZE
    zero_token_id = ord("0")
    one_token_id = ord("1")

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, tokens: Iterable[int]) -> str:
        data = bytes(t for t in tokens if 0 <= t < 256)
        return data.decode("utf-8", errors="replace")

    def render_prompt(self, messages: Iterable[dict]) -> str:
        """Flatten chat messages; ends with the assistant tag so the next
        token is the start of the reply (the fixed diagnosis position for
        bare-label completions)."""
        parts = []
        for message in messages:
            tag = ROLE_TAGS[message["role"]]
            parts.append(f"{tag}\n{message['content']}\n")
        parts.append(f"{ROLE_TAGS['assistant']}\n")
        return "".join(parts)
