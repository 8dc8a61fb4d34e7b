"""Feature ranking via a LASSO regularization path, plus external rankings.

Features are ranked by where they first enter the active set on a geometric
penalty path solved with cyclic coordinate descent. Ranking uses the
training split only; the ranking records a fingerprint of the training ids
it was computed from.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateLabels,
    EmptyFeatureSet,
    PTooLarge,
    ScoreOutOfRange,
    UnknownFeature,
)
from .table import FeatureTable

N_LAMBDAS = 100
LAMBDA_MIN_RATIO = 1e-3
COORD_TOL = 1e-7
MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class RankedFeatures:
    entries: tuple[tuple[str, float], ...]
    method: str  # "lasso_path" | "external"
    train_fingerprint: str

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)


@dataclass(frozen=True)
class FeatureSet:
    selected: tuple[str, ...]
    p: int
    always_included: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "selected": list(self.selected),
            "always_included": list(self.always_included),
        }


def soft_threshold(z: float, lam: float) -> float:
    """sign(z) * max(|z| - lam, 0)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _coordinate_descent(
    Z: np.ndarray,
    yc: np.ndarray,
    lam: float,
    w: np.ndarray,
    r: np.ndarray,
    col_sq: np.ndarray,
    sweeps_left: int,
) -> int:
    """Cyclic coordinate descent for (1/2n)||yc - Zw||^2 + lam*||w||_1.

    Updates w and the residual r in place; returns sweeps used. After the
    active-set phase a full sweep re-checks all coordinates, so convergence
    (max coefficient change < COORD_TOL) is global.
    """
    n, d = Z.shape
    used = 0

    def sweep(indices: Sequence[int]) -> float:
        nonlocal r
        max_delta = 0.0
        for j in indices:
            wj = w[j]
            rho = (Z[:, j] @ r) / n + col_sq[j] * wj
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != wj:
                r -= Z[:, j] * (new - wj)
                w[j] = new
                delta = abs(new - wj)
                if delta > max_delta:
                    max_delta = delta
        return max_delta

    all_indices = range(d)
    while used < sweeps_left:
        delta = sweep(all_indices)
        used += 1
        if delta < COORD_TOL:
            break
        # iterate on the active set until stable, then re-verify globally
        while used < sweeps_left:
            active = np.flatnonzero(w).tolist()
            if not active:
                break
            delta = sweep(active)
            used += 1
            if delta < COORD_TOL:
                break
    return used


def lambda_max(Z: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty with an all-zero solution: max_j |<z_j, y-ybar>|/n.

    Computed per column with the same dot-product expression the solver
    uses, so the all-zero guarantee at this penalty holds bitwise.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n = Z.shape[0]
    yc = y - y.mean()
    return max(abs(float(Z[:, j] @ yc)) / n for j in range(Z.shape[1]))


def lasso_path(
    Z: np.ndarray, y: np.ndarray, lambdas: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the LASSO along a decreasing penalty path with warm starts.

    Z columns are assumed standardized (mean 0); y is centered internally.
    Returns (lambdas, coefs) with coefs of shape (len(lambdas), d).
    At lam >= lambda_max(Z, y) every coefficient is exactly zero.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = Z.shape
    yc = y - y.mean()
    col_sq = np.einsum("ij,ij->j", Z, Z) / n
    if np.any(col_sq <= 0):
        raise ValueError("zero-variance column reached the solver")
    if lambdas is None:
        lam_max = lambda_max(Z, y)
        if lam_max <= 0:
            lam_max = 1.0  # constant response; path is all zeros
        lambdas = np.geomspace(lam_max, lam_max * LAMBDA_MIN_RATIO, N_LAMBDAS)
    else:
        lambdas = np.asarray(lambdas, dtype=float)

    w = np.zeros(d)
    r = yc.copy()
    coefs = np.empty((len(lambdas), d))
    budget = MAX_SWEEPS
    for i, lam in enumerate(lambdas):
        if budget > 0:
            budget -= _coordinate_descent(Z, yc, float(lam), w, r, col_sq, budget)
        coefs[i] = w
    return lambdas, coefs


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """z-score columns (population std); zero-std columns come back zeroed."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    return (X - mean) / safe, mean, std


def train_fingerprint(ids: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(ids).encode("utf-8")).hexdigest()


def _design_matrix(
    train: FeatureTable, feature_names: Sequence[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Complete-case design matrix over the given features, plus labels."""
    label_idx = train.column_index(train.label_column)
    feat_idx = [train.column_index(n) for n in feature_names]
    rows_x: list[list[float]] = []
    rows_y: list[float] = []
    for row in train.rows:
        if row.cells[label_idx].missing:
            continue
        if any(row.cells[i].missing for i in feat_idx):
            continue
        rows_x.append([float(row.cells[i].value) for i in feat_idx])  # type: ignore[arg-type]
        rows_y.append(float(row.cells[label_idx].value))  # type: ignore[arg-type]
    return np.array(rows_x, dtype=float), np.array(rows_y, dtype=float)


def lasso_path_rank(train: FeatureTable) -> RankedFeatures:
    """Rank selectable features by first entry on the penalty path.

    Earlier entry (larger penalty) scores higher; never-entered features
    fall back to |coefficient| at the smallest penalty. Zero-variance
    features score -inf and rank last. Ties break by canonical column index.
    """
    feature_names = train.selectable_feature_names
    if not feature_names:
        raise EmptyFeatureSet("table has no selectable feature columns")
    X, y = _design_matrix(train, feature_names)
    if X.shape[0] == 0:
        raise DegenerateLabels("no complete-case labeled training rows")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos < 2 or n_neg < 2:
        raise DegenerateLabels(f"need >= 2 rows per class, got {n_pos} positive / {n_neg} negative")

    Z, _, std = standardize(X)
    usable = np.flatnonzero(std > 0)
    degenerate = np.flatnonzero(std <= 0)

    scores = np.zeros(len(feature_names))
    scores[degenerate] = -np.inf
    if usable.size:
        lambdas, coefs = lasso_path(Z[:, usable], y)
        nonzero = coefs != 0.0
        for local_j, j in enumerate(usable):
            entered = np.flatnonzero(nonzero[:, local_j])
            if entered.size:
                scores[j] = float(lambdas[entered[0]])
            else:
                scores[j] = float(abs(coefs[-1, local_j]))

    col_index = {name: train.column_index(name) for name in feature_names}
    order = sorted(range(len(feature_names)),
                   key=lambda i: (-scores[i], col_index[feature_names[i]]))
    entries = tuple((feature_names[i], float(scores[i])) for i in order)
    return RankedFeatures(
        entries=entries,
        method="lasso_path",
        train_fingerprint=train_fingerprint(train.subject_ids),
    )


def select_top_p(
    ranked: RankedFeatures, p: int, covariates: Sequence[str]
) -> FeatureSet:
    """First p ranked features; covariates ride along uncounted."""
    if p > len(ranked.entries):
        raise PTooLarge(f"p={p} exceeds {len(ranked.entries)} ranked features")
    selected = tuple(name for name, _ in ranked.entries[:p])
    return FeatureSet(selected=selected, p=p, always_included=tuple(covariates))


def import_external_ranking(
    document: str | Path | io.IOBase, table: FeatureTable
) -> RankedFeatures:
    """Ingest a "feature,score" CSV produced outside the harness.

    Scores must be normalized to [0,1]; names must be selectable features of
    the table. Entries re-sort under the canonical tie rule.
    """
    if isinstance(document, Path):
        text = document.read_text(encoding="utf-8")
    elif isinstance(document, str) and "\n" not in document and Path(document).exists():
        text = Path(document).read_text(encoding="utf-8")
    elif isinstance(document, str):
        text = document
    else:
        data = document.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["feature", "score"]:
        raise UnknownFeature(f'ranking file must start with a "feature,score" header, got {header}')
    selectable = set(table.selectable_feature_names)
    entries: list[tuple[str, float]] = []
    for record in reader:
        if not record:
            continue
        name, score_text = record[0].strip(), record[1].strip()
        if name not in selectable:
            raise UnknownFeature(f"{name!r} is not a selectable feature of the table")
        score = float(score_text)
        if not 0.0 <= score <= 1.0:
            raise ScoreOutOfRange(f"score {score} for {name!r} outside [0,1]")
        entries.append((name, score))
    entries.sort(key=lambda e: (-e[1], table.column_index(e[0])))
    return RankedFeatures(entries=tuple(entries), method="external", train_fingerprint="")


def ranking_to_csv(ranked: RankedFeatures) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["feature", "score"])
    for name, score in ranked.entries:
        writer.writerow([name, repr(score)])
    return buf.getvalue()


def feature_set_to_json(fs: FeatureSet, method: str, fingerprint: str) -> str:
    doc = dict(fs.to_json())
    doc["method"] = method
    doc["train_fingerprint"] = fingerprint
    return json.dumps(doc, indent=2, sort_keys=True)
