"""Shared corpus builders for the driver tests."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def record_for(i: int, label: int, variant: str = "standard") -> dict:
    a, b = 10 + i, 3 * i + 7 * label
    user = f"Patient p{i:02d}: marker_a={a}, marker_b={b}. Diagnose 0 or 1."
    if variant == "interpretable":
        answer = json.dumps(
            {"prediction": label, "reasoning": "", "confidence": 1.0},
            separators=(",", ":"),
        )
    else:
        answer = str(label)
    return {
        "messages": [
            {"role": "system", "content": "You classify patients as 0 or 1."},
            {"role": "user", "content": user},
            {"role": "assistant", "content": answer},
        ],
        "label": label,
        "meta": {"target_id": f"p{i:02d}"},
    }


def write_corpus(path: Path, n: int = 32, variant: str = "standard") -> Path:
    """Memorizable synthetic chat corpus: short distinct prompts, balanced
    alternating labels."""
    lines = [
        json.dumps(record_for(i, i % 2, variant), separators=(",", ":"))
        for i in range(n)
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def corpus_32(tmp_path_factory) -> Path:
    return write_corpus(tmp_path_factory.mktemp("data") / "train32.jsonl")


@pytest.fixture(scope="session")
def trained_32(tmp_path_factory, corpus_32):
    """One 100-step training run shared by the tests that score it."""
    from finetune_driver.train import FinetuneJobSpec, train_adapters

    out_dir = tmp_path_factory.mktemp("adapter")
    spec = FinetuneJobSpec(
        train_jsonl=str(corpus_32),
        output_dir=str(out_dir),
        rank=16,
        alpha=32.0,
        learning_rate=1e-2,
        batch_size=32,
        max_steps=100,
        seed=0,
    )
    result = train_adapters(spec)
    return spec, result
