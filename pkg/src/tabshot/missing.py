"""Simulated MCAR masking and natural-missingness stratification.

Masking is exact-count (not per-cell Bernoulli) so robustness curves
reflect the model, not sampling noise in the treatment. Feature cells only;
subject ids and labels are never masked, and nothing is ever imputed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import BadEdges
from .rng import SplitMix64
from .table import Cell, FeatureTable, SubjectRow, missing_fraction


def round_half_up(x: float) -> int:
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


@dataclass(frozen=True)
class MaskPlan:
    rate: float
    seed: int
    masked: tuple[tuple[str, str], ...]  # (subject id, column name)
    scope: str = "whole_table"

    def to_json(self) -> dict:
        return {
            "rate": self.rate,
            "seed": self.seed,
            "scope": self.scope,
            "coordinates": [list(coord) for coord in self.masked],
        }

    @staticmethod
    def from_json(source: str | Path | dict) -> "MaskPlan":
        doc = json.loads(Path(source).read_text(encoding="utf-8")) if isinstance(source, (str, Path)) else source
        return MaskPlan(
            rate=doc["rate"],
            seed=doc["seed"],
            scope=doc.get("scope", "whole_table"),
            masked=tuple((sid, col) for sid, col in doc["coordinates"]),
        )


@dataclass(frozen=True)
class MissingnessStrata:
    edges: tuple[float, ...]
    bins: tuple[tuple[str, ...], ...]  # per-bin target ids
    pool_mean_missingness: float | None = None

    def bin_of(self, target_id: str) -> int:
        for i, members in enumerate(self.bins):
            if target_id in members:
                return i
        raise KeyError(target_id)


def mask_mcar(table: FeatureTable, rate: float, seed: int) -> tuple[FeatureTable, MaskPlan]:
    """Mask round(rate x eligible) feature cells chosen uniformly.

    All feature cells are eligible (already-Missing ones included, which
    only matters on non-complete-case input); ids and labels never are.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0,1], got {rate}")
    feature_idx = [table.column_index(n) for n in table.feature_names]
    coords = [(ri, ci) for ri in range(len(table.rows)) for ci in feature_idx]
    count = round_half_up(rate * len(coords))
    rng = SplitMix64(seed)
    rng.shuffle(coords)
    chosen = set(coords[:count])

    rows = []
    for ri, row in enumerate(table.rows):
        cells = tuple(
            Cell.absent() if (ri, ci) in chosen else cell
            for ci, cell in enumerate(row.cells)
        )
        rows.append(SubjectRow(subject_id=row.subject_id, cells=cells))
    masked_table = FeatureTable(
        columns=table.columns,
        rows=tuple(rows),
        label_column=table.label_column,
        subject_id_column=table.subject_id_column,
    )
    plan = MaskPlan(
        rate=rate,
        seed=seed,
        masked=tuple(
            (table.rows[ri].subject_id, table.columns[ci].name)
            for ri, ci in coords[:count]
        ),
    )
    return masked_table, plan


def apply_mask_plan(table: FeatureTable, plan: MaskPlan) -> FeatureTable:
    """Replay a persisted plan: mask exactly the recorded coordinates."""
    masked = set(plan.masked)
    rows = []
    for row in table.rows:
        cells = tuple(
            Cell.absent() if (row.subject_id, spec.name) in masked else cell
            for spec, cell in zip(table.columns, row.cells)
        )
        rows.append(SubjectRow(subject_id=row.subject_id, cells=cells))
    return FeatureTable(
        columns=table.columns,
        rows=tuple(rows),
        label_column=table.label_column,
        subject_id_column=table.subject_id_column,
    )


def bin_by_target_missingness(
    table: FeatureTable,
    targets: Sequence[SubjectRow],
    edges: Sequence[float],
    pool: Sequence[SubjectRow] | None = None,
) -> MissingnessStrata:
    """Assign each target to one half-open bin [e_i, e_{i+1}) of its
    missing-feature fraction; the last bin is closed at 1. The optional pool
    rows contribute the pool-mean missingness statistic."""
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or edges[0] != 0.0 or edges[-1] != 1.0:
        raise BadEdges(f"edges must start at 0 and end at 1, got {edges}")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise BadEdges(f"edges must be strictly increasing, got {edges}")

    bins: list[list[str]] = [[] for _ in range(len(edges) - 1)]
    for row in targets:
        fraction = missing_fraction(row, table)
        index = len(edges) - 2  # closed last bin catches fraction == 1.0
        for i in range(len(edges) - 1):
            if edges[i] <= fraction < edges[i + 1]:
                index = i
                break
        bins[index].append(row.subject_id)

    pool_mean = None
    if pool is not None and len(pool) > 0:
        pool_mean = sum(missing_fraction(r, table) for r in pool) / len(pool)
    return MissingnessStrata(
        edges=edges,
        bins=tuple(tuple(b) for b in bins),
        pool_mean_missingness=pool_mean,
    )


def natural_missingness_split(
    table: FeatureTable, seed: int, pool_fraction: float = 0.2
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Reserve a fraction of an incomplete cohort as the ICL pool.

    Returns (pool ids, target ids); the pool keeps its natural, heterogeneous
    missingness and is used only to populate prompts.
    """
    ids = list(table.subject_ids)
    rng = SplitMix64(seed)
    rng.shuffle(ids)
    n_pool = round_half_up(pool_fraction * len(ids))
    return tuple(ids[:n_pool]), tuple(ids[n_pool:])
