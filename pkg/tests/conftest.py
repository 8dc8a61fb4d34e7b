"""Shared synthetic-cohort builders for the test suite."""

from __future__ import annotations

import math
import random

import pytest

from tabshot.table import FeatureTable, TableSchema, load_table


def toy_schema(n_features: int = 1, feature_names: list[str] | None = None) -> TableSchema:
    names = feature_names or [f"feat_{i}" for i in range(n_features)]
    return TableSchema.from_json(
        {
            "subject_id_column": "sid",
            "label_column": "dx",
            "columns": [
                {"name": "sid", "kind": "categorical"},
                {"name": "age", "kind": "numeric", "unit": "years", "is_covariate": True},
                {"name": "sex", "kind": "categorical", "levels": ["M", "F"], "is_covariate": True},
                {"name": "education", "kind": "count", "unit": "years", "is_covariate": True},
                {"name": "apoe4", "kind": "count", "is_covariate": True},
                *[{"name": n, "kind": "numeric"} for n in names],
                {"name": "dx", "kind": "binary", "is_label": True},
            ],
        }
    )


def synthetic_cohort_csv(
    n: int,
    n_positive: int,
    n_features: int = 3,
    seed: int = 0,
    missing_prob: float = 0.0,
    feature_names: list[str] | None = None,
) -> str:
    """Deterministic CSV text for a labeled cohort.

    Labels are shuffled through the rows; positive rows get systematically
    larger feature values so threshold rules and selectors have signal.
    """
    rng = random.Random(seed)
    names = feature_names or [f"feat_{i}" for i in range(n_features)]
    labels = [1] * n_positive + [0] * (n - n_positive)
    rng.shuffle(labels)
    lines = ["sid,age,sex,education,apoe4," + ",".join(names) + ",dx"]
    for i in range(n):
        label = labels[i]
        age = 55 + rng.randrange(0, 40)
        sex = rng.choice(["M", "F"])
        education = rng.randrange(8, 21)
        apoe4 = rng.randrange(0, 3)
        cells = []
        for j in range(len(names)):
            if rng.random() < missing_prob:
                cells.append("")
            else:
                value = rng.gauss(2.0 * label, 1.0) + 0.1 * j
                cells.append(f"{value:.4f}")
        lines.append(
            f"s{i:04d},{age},{sex},{education},{apoe4},{','.join(cells)},{label}"
        )
    return "\n".join(lines) + "\n"


def synthetic_table(
    n: int,
    n_positive: int,
    n_features: int = 3,
    seed: int = 0,
    missing_prob: float = 0.0,
    feature_names: list[str] | None = None,
) -> FeatureTable:
    names = feature_names or [f"feat_{i}" for i in range(n_features)]
    csv_text = synthetic_cohort_csv(
        n, n_positive, n_features, seed, missing_prob, feature_names=names
    )
    return load_table(csv_text, toy_schema(feature_names=names))


@pytest.fixture
def small_table() -> FeatureTable:
    return synthetic_table(30, 12, n_features=2, seed=7)


def age_of(table: FeatureTable, subject_id: str) -> float:
    cell = table.cell(table.row_by_id(subject_id), "age")
    assert not cell.missing
    return float(cell.value)


def brute_force_metrics(pairs: list[tuple[int | None, int]]) -> dict:
    """Independent metric computation from (prediction, truth) pairs.

    Predictions of None are undecodable: wrong for their true class. Written
    against the defining formulas, not the library code.
    """
    tp = sum(1 for p, t in pairs if p == 1 and t == 1)
    fp = sum(1 for p, t in pairs if p == 1 and t == 0)
    tn = sum(1 for p, t in pairs if p == 0 and t == 0)
    fn = sum(1 for p, t in pairs if p == 0 and t == 1)
    upos = sum(1 for p, t in pairs if p is None and t == 1)
    uneg = sum(1 for p, t in pairs if p is None and t == 0)
    precision = tp / (tp + fp) if (tp + fp) else None
    recall = tp / (tp + fn + upos) if (tp + fn + upos) else None
    specificity = tn / (tn + fp + uneg) if (tn + fp + uneg) else None
    if precision is None or recall is None or (precision + recall) == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    balanced = None if recall is None or specificity is None else (recall + specificity) / 2
    return {
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
        "undecodable_pos": upos, "undecodable_neg": uneg,
        "precision": precision, "recall": recall, "f1": f1,
        "balanced_accuracy": balanced,
    }


def close_or_both_none(a, b, tol=1e-12) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)
