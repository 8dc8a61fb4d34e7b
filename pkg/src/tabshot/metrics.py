"""Confusion counts, the metric suite, and per-seed aggregation.

Undecodable generations score as wrong against the true label and are
tracked separately so results can be re-scored later. 0/0 metric cases
surface as None (undefined), never silently 0 or 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import EmptyInput, IdMismatch
from .records import PredictionRecord

METRIC_NAMES = ("f1", "balanced_accuracy", "precision", "recall")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    undecodable_pos: int = 0  # undecodable with true label 1
    undecodable_neg: int = 0  # undecodable with true label 0

    @property
    def undecodable(self) -> int:
        return self.undecodable_pos + self.undecodable_neg

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn + self.undecodable


@dataclass(frozen=True)
class MetricsReport:
    f1: float | None
    balanced_accuracy: float | None
    precision: float | None
    recall: float | None
    n: int
    seed: int | None = None
    undecodable: int = 0

    def as_dict(self) -> dict:
        return {
            "f1": self.f1,
            "balanced_accuracy": self.balanced_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "n": self.n,
            "seed": self.seed,
            "undecodable": self.undecodable,
        }


@dataclass(frozen=True)
class SummaryStats:
    stats: dict  # metric -> {"mean", "sd", "n_defined", "n_undefined"}
    seeds: tuple[int | None, ...]

    def as_dict(self) -> dict:
        return {"seeds": list(self.seeds), "metrics": self.stats}


def confusion(
    preds: Sequence[PredictionRecord], truth: Mapping[str, int]
) -> ConfusionMatrix:
    """Count outcomes with class 1 as positive; alignment is by target id."""
    seen: set[str] = set()
    tp = fp = tn = fn = upos = uneg = 0
    for pred in preds:
        if pred.target_id in seen:
            raise IdMismatch(f"duplicate prediction for {pred.target_id!r}")
        seen.add(pred.target_id)
        if pred.target_id not in truth:
            raise IdMismatch(f"no truth label for {pred.target_id!r}")
        actual = truth[pred.target_id]
        if pred.label is None:
            if actual == 1:
                upos += 1
            else:
                uneg += 1
        elif pred.label == 1:
            if actual == 1:
                tp += 1
            else:
                fp += 1
        else:
            if actual == 0:
                tn += 1
            else:
                fn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn,
                           undecodable_pos=upos, undecodable_neg=uneg)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics(cm: ConfusionMatrix, seed: int | None = None) -> MetricsReport:
    """Precision, recall, F1, balanced accuracy from confusion counts.

    Undecodables land in the recall/specificity denominators (they are
    wrong predictions for their true class) but never in precision's.
    """
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn + cm.undecodable_pos)
    specificity = _ratio(cm.tn, cm.tn + cm.fp + cm.undecodable_neg)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    if recall is None or specificity is None:
        balanced = None
    else:
        balanced = (recall + specificity) / 2
    return MetricsReport(
        f1=f1,
        balanced_accuracy=balanced,
        precision=precision,
        recall=recall,
        n=cm.total,
        seed=seed,
        undecodable=cm.undecodable,
    )


def aggregate_seeds(reports: Sequence[MetricsReport]) -> SummaryStats:
    """Mean and sample standard deviation per metric across seeds.

    Undefined metric values are excluded and counted; a single defined value
    reports SD = 0 by convention.
    """
    if not reports:
        raise EmptyInput("no reports to aggregate")
    stats: dict[str, dict] = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in reports]
        defined = [v for v in values if v is not None]
        entry: dict = {"n_defined": len(defined), "n_undefined": len(values) - len(defined)}
        if defined:
            mean = math.fsum(defined) / len(defined)
            if len(defined) > 1:
                variance = math.fsum((v - mean) ** 2 for v in defined) / (len(defined) - 1)
                sd = math.sqrt(variance)
            else:
                sd = 0.0
            entry["mean"] = mean
            entry["sd"] = sd
        else:
            entry["mean"] = None
            entry["sd"] = None
        stats[name] = entry
    return SummaryStats(stats=stats, seeds=tuple(r.seed for r in reports))
