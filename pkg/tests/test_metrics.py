import math
import random

import pytest

from conftest import brute_force_metrics, close_or_both_none
from tabshot.errors import EmptyInput, IdMismatch
from tabshot.metrics import ConfusionMatrix, aggregate_seeds, confusion, metrics
from tabshot.records import PredictionRecord


def records_from_pairs(pairs):
    preds = []
    truth = {}
    for i, (p, t) in enumerate(pairs):
        tid = f"t{i:04d}"
        preds.append(PredictionRecord(target_id=tid, label=p))
        truth[tid] = t
    return preds, truth


def test_confusion_all_correct():
    pairs = [(1, 1)] * 10 + [(0, 0)] * 20
    cm = confusion(*records_from_pairs(pairs))
    assert (cm.tp, cm.fp, cm.tn, cm.fn, cm.undecodable) == (10, 0, 20, 0, 0)


def test_confusion_all_predicted_positive():
    pairs = [(1, 1)] * 10 + [(1, 0)] * 20
    cm = confusion(*records_from_pairs(pairs))
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (10, 20, 0, 0)


def test_confusion_counts_undecodable():
    pairs = [(1, 1)] * 14 + [(0, 0)] * 15 + [(None, 1)]
    cm = confusion(*records_from_pairs(pairs))
    assert cm.total == 30
    assert cm.undecodable == 1
    assert cm.undecodable_pos == 1


def test_confusion_id_mismatch():
    preds, truth = records_from_pairs([(1, 1), (0, 0)])
    del truth["t0001"]
    with pytest.raises(IdMismatch):
        confusion(preds, truth)
    preds2, truth2 = records_from_pairs([(1, 1)])
    with pytest.raises(IdMismatch):
        confusion(preds2 + preds2, truth2)


def test_metrics_perfect():
    report = metrics(ConfusionMatrix(10, 0, 20, 0))
    assert report.f1 == 1.0
    assert report.balanced_accuracy == 1.0


def test_metrics_all_positive_predictions():
    report = metrics(ConfusionMatrix(10, 20, 0, 0))
    assert report.precision == pytest.approx(1 / 3)
    assert report.recall == 1.0
    assert report.f1 == pytest.approx(0.5)
    assert report.balanced_accuracy == pytest.approx(0.5)


def test_metrics_undefined_cases():
    report = metrics(ConfusionMatrix(0, 0, 20, 0))
    assert report.precision is None
    assert report.recall is None
    assert report.f1 is None
    # both precision and recall defined but zero -> 0/0 f1 -> undefined
    report2 = metrics(ConfusionMatrix(0, 5, 10, 5))
    assert report2.precision == 0.0
    assert report2.recall == 0.0
    assert report2.f1 is None


def test_undecodables_hurt_recall_and_balance():
    clean = metrics(ConfusionMatrix(8, 2, 15, 2))
    dirty = metrics(ConfusionMatrix(8, 2, 15, 2, undecodable_pos=3, undecodable_neg=5))
    assert dirty.recall < clean.recall
    assert dirty.balanced_accuracy < clean.balanced_accuracy
    assert dirty.precision == clean.precision


def test_f1_ignores_added_true_negatives():
    a = metrics(ConfusionMatrix(7, 3, 10, 2))
    b = metrics(ConfusionMatrix(7, 3, 500, 2))
    assert a.f1 == b.f1
    assert a.balanced_accuracy != b.balanced_accuracy


def test_metrics_match_brute_force_on_random_vectors():
    rng = random.Random(0)
    for _ in range(200):
        n = rng.randrange(1, 40)
        pairs = []
        for _ in range(n):
            p = rng.choice([0, 1, None])
            t = rng.choice([0, 1])
            pairs.append((p, t))
        cm = confusion(*records_from_pairs(pairs))
        report = metrics(cm)
        expected = brute_force_metrics(pairs)
        for name in ("precision", "recall", "f1", "balanced_accuracy"):
            assert close_or_both_none(getattr(report, name), expected[name]), (pairs, name)


def reports_from_f1s(values):
    return [
        metrics(ConfusionMatrix(10, 0, 10, 0), seed=i) if v is None else _fixed_report(v, i)
        for i, v in enumerate(values)
    ]


def _fixed_report(f1, seed):
    from tabshot.metrics import MetricsReport

    return MetricsReport(
        f1=f1, balanced_accuracy=f1, precision=f1, recall=f1, n=10, seed=seed
    )


def test_aggregate_single_report():
    stats = aggregate_seeds([_fixed_report(0.8, 36)])
    assert stats.stats["f1"]["mean"] == 0.8
    assert stats.stats["f1"]["sd"] == 0.0
    assert stats.stats["f1"]["n_defined"] == 1


def test_aggregate_two_values():
    stats = aggregate_seeds([_fixed_report(0.8, 1), _fixed_report(0.9, 2)])
    assert stats.stats["f1"]["mean"] == pytest.approx(0.85)
    assert stats.stats["f1"]["sd"] == pytest.approx(0.07071067811865475)


def test_aggregate_identical_reports_zero_sd():
    stats = aggregate_seeds([_fixed_report(0.7, s) for s in range(10)])
    assert stats.stats["f1"]["sd"] == 0.0


def test_aggregate_excludes_undefined_with_count():
    from tabshot.metrics import MetricsReport

    undefined = MetricsReport(f1=None, balanced_accuracy=None, precision=None,
                              recall=None, n=5, seed=9)
    stats = aggregate_seeds([_fixed_report(0.6, 1), undefined])
    assert stats.stats["f1"]["n_defined"] == 1
    assert stats.stats["f1"]["n_undefined"] == 1
    assert stats.stats["f1"]["mean"] == 0.6


def test_aggregate_permutation_invariant():
    reports = [_fixed_report(v, i) for i, v in enumerate([0.5, 0.7, 0.9, 0.4])]
    forward = aggregate_seeds(reports)
    backward = aggregate_seeds(list(reversed(reports)))
    assert forward.stats == backward.stats


def test_aggregate_empty_input():
    with pytest.raises(EmptyInput):
        aggregate_seeds([])


def test_sample_sd_formula():
    values = [0.2, 0.5, 0.8]
    stats = aggregate_seeds([_fixed_report(v, i) for i, v in enumerate(values)])
    mean = sum(values) / 3
    sd = math.sqrt(sum((v - mean) ** 2 for v in values) / 2)
    assert stats.stats["f1"]["sd"] == pytest.approx(sd, abs=1e-15)
