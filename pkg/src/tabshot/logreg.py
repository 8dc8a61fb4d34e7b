"""In-repo logistic-regression baseline.

Full-batch gradient descent with backtracking line search on the mean
logistic loss plus an L2 penalty on the non-bias weights. In the few-shot
regime the model is fit per target on exactly the k context examples the
prompt pipeline sees, so the comparison is information-fair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, SingleClass
from .records import PredictionRecord
from .selection import standardize
from .splits import ContextSet
from .table import FeatureTable

GRAD_TOL = 1e-8
MAX_ITERS = 50_000
ARMIJO_C = 1e-4
BACKTRACK = 0.5


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray  # shape (d,)
    bias: float
    l2_strength: float
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    grad_inf_norm: float = float("inf")

    def standardized(self, x: np.ndarray) -> np.ndarray:
        if self.mean.size == 0:
            return x
        safe = np.where(self.std > 0, self.std, 1.0)
        return (x - self.mean) / safe


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean logistic loss + (l2/2)||w||^2 (bias unpenalized)."""
    z = X @ w + b
    losses = np.logaddexp(0.0, z) - y * z
    return float(losses.mean() + 0.5 * l2 * (w @ w))


def logreg_gradient_wb(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[np.ndarray, float]:
    n = X.shape[0]
    residual = sigmoid(X @ w + b) - y
    grad_w = X.T @ residual / n + l2 * w
    grad_b = float(residual.mean())
    return grad_w, grad_b


def logreg_gradient(model: LogRegModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient over (weights, bias); bias is the last entry."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] != model.weights.shape[0] or X.shape[0] != y.shape[0]:
        raise DimMismatch(
            f"X {X.shape} incompatible with weights {model.weights.shape} / y {y.shape}"
        )
    grad_w, grad_b = logreg_gradient_wb(model.weights, model.bias, X, y, model.l2_strength)
    return np.append(grad_w, grad_b)


def fit_logreg(
    X: np.ndarray,
    y: np.ndarray,
    l2: float,
    mean: np.ndarray | None = None,
    std: np.ndarray | None = None,
) -> LogRegModel:
    """Fit on an already-standardized matrix.

    Gradient descent with Armijo backtracking; stops when the gradient
    infinity norm drops below 1e-8 or after 50,000 iterations. Refuses
    single-class targets (callers fall back to the majority class).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimMismatch(f"X {X.shape} does not align with y {y.shape}")
    if X.shape[0] < 1:
        raise SingleClass("no samples")
    classes = set(np.unique(y).tolist())
    if not classes <= {0.0, 1.0}:
        raise ValueError(f"labels must be 0/1, got {sorted(classes)}")
    if len(classes) < 2:
        raise SingleClass(f"only class {classes} present")

    d = X.shape[1]
    w = np.zeros(d)
    b = 0.0
    value = logreg_objective(w, b, X, y, l2)
    step = 1.0
    iterations = 0
    grad_norm = float("inf")
    for iterations in range(1, MAX_ITERS + 1):
        grad_w, grad_b = logreg_gradient_wb(w, b, X, y, l2)
        grad_norm = max(float(np.max(np.abs(grad_w))) if d else 0.0, abs(grad_b))
        if grad_norm < GRAD_TOL:
            break
        grad_sq = float(grad_w @ grad_w) + grad_b * grad_b
        t = step
        while True:
            new_w = w - t * grad_w
            new_b = b - t * grad_b
            new_value = logreg_objective(new_w, new_b, X, y, l2)
            if new_value <= value - ARMIJO_C * t * grad_sq or t < 1e-16:
                break
            t *= BACKTRACK
        w, b, value = new_w, new_b, new_value
        step = t * 2.0  # warm-start the next line search

    return LogRegModel(
        weights=w,
        bias=b,
        l2_strength=l2,
        mean=mean if mean is not None else np.zeros(0),
        std=std if std is not None else np.zeros(0),
        iterations=iterations,
        grad_inf_norm=grad_norm,
    )


def predict_logreg(model: LogRegModel, x: np.ndarray) -> tuple[float, int]:
    """(probability of class 1, label); label = probability >= 0.5."""
    x = np.asarray(x, dtype=float)
    if x.shape != model.weights.shape:
        raise DimMismatch(f"x {x.shape} does not match weights {model.weights.shape}")
    z = float(model.weights @ model.standardized(x) + model.bias)
    probability = float(sigmoid(np.array([z]))[0])
    return probability, int(probability >= 0.5)


@dataclass(frozen=True)
class MajorityModel:
    label: int

    def predict(self, x: np.ndarray) -> tuple[float, int]:
        return (float(self.label), self.label)


def external_baseline_predict(
    command: list[str], train_X: np.ndarray, train_y: np.ndarray, test_x: np.ndarray
) -> tuple[int, float]:
    """Adapter slot for out-of-repo classical models.

    The executable reads {"train":[{"x":[...],"y":0|1},...],"test":{"x":[...]}}
    on stdin and writes {"label":0|1,"probability":p} on stdout.
    """
    import json
    import subprocess

    payload = {
        "train": [
            {"x": [float(v) for v in x], "y": int(y)}
            for x, y in zip(np.asarray(train_X), np.asarray(train_y))
        ],
        "test": {"x": [float(v) for v in np.asarray(test_x)]},
    }
    proc = subprocess.run(
        command,
        input=json.dumps(payload).encode("utf-8"),
        capture_output=True,
        check=True,
    )
    reply = json.loads(proc.stdout.decode("utf-8"))
    return int(reply["label"]), float(reply["probability"])


def fit_context_baseline(
    table: FeatureTable,
    context: ContextSet,
    target_id: str,
    feature_names: tuple[str, ...],
    l2: float = 0.1,
    seed: int | None = None,
) -> PredictionRecord:
    """Fit one tiny model on a target's context examples and predict it.

    Rows must be complete on the chosen features (baselines require complete
    data, a deliberate contrast with the prompt pipeline). Single-class
    contexts fall back to the context majority label.
    """
    idx = [table.column_index(n) for n in feature_names]

    def vector(subject_id: str) -> np.ndarray:
        row = table.row_by_id(subject_id)
        values = []
        for i in idx:
            cell = row.cells[i]
            if cell.missing:
                raise ValueError(f"baseline input for {subject_id!r} has a missing cell")
            values.append(float(cell.value))  # type: ignore[arg-type]
        return np.array(values)

    X = np.stack([vector(eid) for eid, _ in context.examples])
    y = np.array([label for _, label in context.examples], dtype=float)
    x_target = vector(target_id)
    try:
        Z, mean, std = standardize(X)
        model = fit_logreg(Z, y, l2, mean=mean, std=std)
        probability, label = predict_logreg(model, x_target)
    except SingleClass:
        counts = [int((y == 0).sum()), int((y == 1).sum())]
        majority = int(counts[1] >= counts[0])
        probability, label = MajorityModel(majority).predict(x_target)
    return PredictionRecord(
        target_id=target_id,
        label=label,
        raw_text="",
        confidence=probability,
        seed=seed,
        format_desc="logreg-baseline",
        endpoint_desc=f"logreg(l2={l2})",
    )
