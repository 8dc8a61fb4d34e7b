import sys

import numpy as np
import pytest

from conftest import synthetic_table
from tabshot.errors import DimMismatch, SingleClass
from tabshot.logreg import (
    LogRegModel,
    external_baseline_predict,
    fit_context_baseline,
    fit_logreg,
    logreg_gradient,
    logreg_objective,
    predict_logreg,
    sigmoid,
)
from tabshot.splits import ContextSet


def bisect_stationarity(fn, lo, hi, tol=1e-12):
    """Root of a monotone scalar function by bisection (independent oracle)."""
    flo = fn(lo)
    for _ in range(200):
        mid = (lo + hi) / 2
        fmid = fn(mid)
        if abs(hi - lo) < tol:
            break
        if (fmid < 0) == (flo < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return (lo + hi) / 2


def test_two_point_separable_matches_bisection_oracle():
    X = np.array([[-1.0], [1.0]])
    y = np.array([0.0, 1.0])
    model = fit_logreg(X, y, l2=1.0)
    assert model.weights[0] > 0
    assert model.grad_inf_norm < 1e-8
    # by symmetry the bias is 0 and w solves w = sigmoid(-w)
    w_star = bisect_stationarity(lambda w: w - 1 / (1 + np.exp(w)), 0.0, 1.0)
    assert model.weights[0] == pytest.approx(w_star, abs=1e-7)
    assert abs(model.bias) < 1e-7


def test_zero_weight_model_predicts_half():
    model = LogRegModel(weights=np.zeros(3), bias=0.0, l2_strength=0.0)
    prob, label = predict_logreg(model, np.array([1.0, -2.0, 3.0]))
    assert prob == 0.5
    assert label == 1  # >= 0.5 convention


def test_gradient_at_zero_matches_formula():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 3))
    y = (rng.random(7) < 0.5).astype(float)
    model = LogRegModel(weights=np.zeros(3), bias=0.0, l2_strength=0.0)
    grad = logreg_gradient(model, X, y)
    expected_w = X.T @ (0.5 - y) / 7
    assert np.allclose(grad[:3], expected_w, atol=1e-12)
    assert grad[3] == pytest.approx(float((0.5 - y).mean()), abs=1e-12)


def fd_gradient(w, b, X, y, l2, h=1e-5):
    """Central finite differences on the objective (independent oracle)."""
    theta = np.append(w, b)

    def value(vec):
        return logreg_objective(vec[:-1], vec[-1], X, y, l2)

    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy(); up[i] += h
        down = theta.copy(); down[i] -= h
        grad[i] = (value(up) - value(down)) / (2 * h)
    return grad


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for trial in range(20):
        n, d = 5, 3
        X = rng.normal(size=(n, d))
        y = (rng.random(n) < 0.5).astype(float)
        w = rng.normal(size=d)
        b = float(rng.normal())
        l2 = float(rng.random())
        model = LogRegModel(weights=w, bias=b, l2_strength=l2)
        analytic = logreg_gradient(model, X, y)
        numeric = fd_gradient(w, b, X, y, l2)
        denom = max(1.0, float(np.max(np.abs(numeric))))
        assert np.max(np.abs(analytic - numeric)) / denom < 1e-6


def test_objective_decreases_and_optimum_found():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 4))
    beta = np.array([1.5, -2.0, 0.5, 0.0])
    y = (sigmoid(X @ beta) > rng.random(40)).astype(float)
    initial = logreg_objective(np.zeros(4), 0.0, X, y, 0.1)
    model = fit_logreg(X, y, l2=0.1)
    final = logreg_objective(model.weights, model.bias, X, y, 0.1)
    assert final < initial
    assert model.grad_inf_norm < 1e-8


def test_predict_symmetry_and_saturation():
    model = LogRegModel(weights=np.array([2.0]), bias=0.0, l2_strength=0.0)
    p_pos, _ = predict_logreg(model, np.array([1.0]))
    p_neg, _ = predict_logreg(model, np.array([-1.0]))
    assert p_pos + p_neg == pytest.approx(1.0, abs=1e-12)
    p_big, label = predict_logreg(model, np.array([10.0]))
    assert p_big > 0.999 and label == 1


def test_dim_mismatch():
    model = LogRegModel(weights=np.zeros(3), bias=0.0, l2_strength=0.0)
    with pytest.raises(DimMismatch):
        predict_logreg(model, np.zeros(4))
    with pytest.raises(DimMismatch):
        logreg_gradient(model, np.zeros((5, 4)), np.zeros(5))


def test_single_class_refused():
    with pytest.raises(SingleClass):
        fit_logreg(np.ones((4, 2)), np.ones(4), l2=0.1)


def test_context_baseline_majority_fallback():
    table = synthetic_table(20, 0, n_features=2, seed=3)  # all labels 0
    context = ContextSet(
        "s0005",
        tuple((r.subject_id, 0) for r in table.rows[:4]),
        4,
        "pool_test",
    )
    record = fit_context_baseline(table, context, "s0005", ("feat_0", "feat_1"))
    assert record.label == 0


def test_context_baseline_learns_separation():
    table = synthetic_table(60, 30, n_features=1, seed=4)
    # pick 3 positive and 3 negative examples; feature separates by design
    pos = [r.subject_id for r in table.rows if table.label_of(r) == 1][:3]
    neg = [r.subject_id for r in table.rows if table.label_of(r) == 0][:3]
    target = [r.subject_id for r in table.rows if table.label_of(r) == 1][10]
    context = ContextSet(
        target, tuple((i, 1) for i in pos) + tuple((i, 0) for i in neg), 6, "pool"
    )
    record = fit_context_baseline(table, context, target, ("feat_0",), l2=0.01)
    assert record.label in (0, 1)
    assert 0.0 <= record.confidence <= 1.0


def test_external_baseline_adapter_contract():
    adapter = (
        "import json,sys\n"
        "doc=json.load(sys.stdin)\n"
        "ys=[r['y'] for r in doc['train']]\n"
        "label=int(sum(ys)*2>=len(ys))\n"
        "print(json.dumps({'label':label,'probability':sum(ys)/len(ys)}))\n"
    )
    train_X = np.array([[0.0], [1.0], [2.0]])
    train_y = np.array([1, 1, 0])
    label, probability = external_baseline_predict(
        [sys.executable, "-c", adapter], train_X, train_y, np.array([1.5])
    )
    assert label == 1
    assert probability == pytest.approx(2 / 3)
