"""Fixed-position diagnosis-token evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .data import ChatRecord, encode_record, load_chat_jsonl
from .model import TinyChatLM
from .tokenizer import ByteTokenizer
from .train import load_trained


@dataclass(frozen=True)
class SmokeReport:
    n: int
    n_correct: int

    @property
    def accuracy(self) -> float | None:
        return None if self.n == 0 else self.n_correct / self.n

    def summary(self) -> str:
        if self.n == 0:
            return "n=0, accuracy undefined"
        return f"n={self.n}, accuracy={self.accuracy:.4f}"


def smoke_eval_model(
    model: TinyChatLM,
    tokenizer: ByteTokenizer,
    records: list[ChatRecord],
    constrain_to_labels: bool = True,
) -> SmokeReport:
    """Greedy-decode one token at each record's diagnosis position.

    By default decoding is constrained to the label alphabet {"0","1"},
    mirroring the upstream constrained-decoding contract; pass False to
    score against the full vocabulary.
    """
    if not records:
        return SmokeReport(n=0, n_correct=0)
    was_training = model.training
    model.eval()
    label_ids = torch.tensor([tokenizer.zero_token_id, tokenizer.one_token_id])
    n_correct = 0
    with torch.no_grad():
        for record in records:
            example = encode_record(record, tokenizer, model.config.max_seq)
            context = torch.tensor(
                [example.tokens[: example.label_token_index]], dtype=torch.long
            )
            logits = model(context)[0, -1]
            if constrain_to_labels:
                predicted = int(label_ids[int(torch.argmax(logits[label_ids]))])
            else:
                predicted = int(torch.argmax(logits))
            if predicted == example.gold_token:
                n_correct += 1
    if was_training:
        model.train()
    return SmokeReport(n=len(records), n_correct=n_correct)


def smoke_eval(
    adapter_dir: str | Path,
    val_jsonl: str | Path,
    constrain_to_labels: bool = True,
) -> SmokeReport:
    """Score a trained adapter directory against a chat JSONL file."""
    model, tokenizer, _ = load_trained(adapter_dir)
    records = load_chat_jsonl(val_jsonl)
    return smoke_eval_model(model, tokenizer, records, constrain_to_labels)
