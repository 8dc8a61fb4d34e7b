"""Prediction records shared by decoding, reflection, and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class PredictionRecord:
    target_id: str
    label: int | None  # None when the generation was undecodable
    raw_text: str = ""
    confidence: float | None = None
    reasoning: str | None = None
    seed: int | None = None
    format_desc: str = ""
    endpoint_desc: str = ""
    round: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def undecodable(self) -> bool:
        return self.label is None
