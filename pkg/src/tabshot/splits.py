"""Seeded cohort partitioning and per-target context sampling.

A cohort is split into train/val/test plus three split-specific example
pools. Pools only ever populate prompts; they never reach optimization or
scoring. Context sets are sampled with a per-target seed so concurrent
evaluation order cannot change them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import InvalidAssignment, PoolTooSmall, TargetInPool, TooFewSubjects
from .rng import SplitMix64, derive_stream_seed
from .table import FeatureTable

PARTITIONS = ("train", "val", "test", "pool_train", "pool_val", "pool_test")

ICL_POOL_FOR_SPLIT = {"train": "pool_train", "val": "pool_val", "test": "pool_test"}


@dataclass(frozen=True)
class SplitFractions:
    train: float = 0.40
    val: float = 0.10
    test: float = 0.20
    pool_train: float = 0.10
    pool_val: float = 0.10
    pool_test: float = 0.10

    def __post_init__(self) -> None:
        values = self.as_tuple()
        if any(v < 0 for v in values):
            raise ValueError("fractions must be nonnegative")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1.0, got {sum(values)}")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.train, self.val, self.test,
                self.pool_train, self.pool_val, self.pool_test)


@dataclass(frozen=True)
class SplitAssignment:
    partitions: dict[str, tuple[str, ...]]
    seed: int
    stratified: bool
    fractions: SplitFractions

    def ids(self, name: str) -> tuple[str, ...]:
        return self.partitions[name]

    def split_of(self, subject_id: str) -> str:
        for name, ids in self.partitions.items():
            if subject_id in ids:
                return name
        raise KeyError(subject_id)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "stratified": self.stratified,
            "fractions": dict(zip(PARTITIONS, self.fractions.as_tuple())),
            "partitions": {name: list(ids) for name, ids in self.partitions.items()},
        }

    @staticmethod
    def from_json(source: str | Path | dict) -> "SplitAssignment":
        if isinstance(source, (str, Path)):
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        else:
            doc = source
        fractions = SplitFractions(**{k: doc["fractions"][k] for k in PARTITIONS})
        partitions = {name: tuple(doc["partitions"][name]) for name in PARTITIONS}
        return SplitAssignment(
            partitions=partitions,
            seed=doc["seed"],
            stratified=doc["stratified"],
            fractions=fractions,
        )

    def validate(self, cohort_ids: Sequence[str] | None = None) -> None:
        """Raise InvalidAssignment if partitions overlap or leak the cohort."""
        all_ids: list[str] = []
        for name in PARTITIONS:
            if name not in self.partitions:
                raise InvalidAssignment(f"missing partition {name!r}")
            all_ids.extend(self.partitions[name])
        if len(set(all_ids)) != len(all_ids):
            raise InvalidAssignment("partitions are not pairwise disjoint")
        if cohort_ids is not None and set(all_ids) != set(cohort_ids):
            raise InvalidAssignment("partition union does not equal the cohort")


@dataclass(frozen=True)
class ContextSet:
    target_id: str
    examples: tuple[tuple[str, int], ...]
    k: int
    source_pool: str = ""


def largest_remainder(quotas: Sequence[float], total: int) -> list[int]:
    """Apportion `total` seats to quotas (which sum to `total`).

    Floors first, then leftover seats by descending fractional remainder;
    remainder ties break by declared quota order.
    """
    floors = [int(q) for q in quotas]
    remainders = [q - f for q, f in zip(quotas, floors)]
    leftover = total - sum(floors)
    order = sorted(range(len(quotas)), key=lambda i: (-remainders[i], i))
    counts = list(floors)
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def partition_sizes(n: int, fractions: SplitFractions) -> list[int]:
    return largest_remainder([f * n for f in fractions.as_tuple()], n)


def make_splits(
    table: FeatureTable,
    fractions: SplitFractions | None = None,
    seed: int = 0,
    stratified: bool = True,
) -> SplitAssignment:
    """Seeded partition into the six cohort slices.

    Deterministic for fixed (table row order, fractions, seed, stratified).
    When stratified, each class is apportioned across partitions by largest
    remainder against the partition sizes, keeping per-partition prevalence
    within one subject per class of the cohort prevalence.
    """
    fractions = fractions or SplitFractions()
    n = len(table.rows)
    if n < 6:
        raise TooFewSubjects(f"need at least 6 subjects, got {n}")
    sizes = partition_sizes(n, fractions)
    rng = SplitMix64(seed)

    if stratified:
        positives = [r.subject_id for r in table.rows if table.label_of(r) == 1]
        negatives = [r.subject_id for r in table.rows if table.label_of(r) == 0]
        if len(positives) + len(negatives) != n:
            raise InvalidAssignment("stratified splits require a present 0/1 label on every row")
        n_pos = len(positives)
        pos_counts = largest_remainder([s * n_pos / n for s in sizes], n_pos)
        rng.shuffle(positives)
        rng.shuffle(negatives)
        partitions: dict[str, tuple[str, ...]] = {}
        pos_at = neg_at = 0
        for name, size, n_pos_here in zip(PARTITIONS, sizes, pos_counts):
            n_neg_here = size - n_pos_here
            members = positives[pos_at:pos_at + n_pos_here] + negatives[neg_at:neg_at + n_neg_here]
            pos_at += n_pos_here
            neg_at += n_neg_here
            partitions[name] = tuple(members)
    else:
        ids = [r.subject_id for r in table.rows]
        rng.shuffle(ids)
        partitions = {}
        at = 0
        for name, size in zip(PARTITIONS, sizes):
            partitions[name] = tuple(ids[at:at + size])
            at += size

    assignment = SplitAssignment(
        partitions=partitions, seed=seed, stratified=stratified, fractions=fractions
    )
    assignment.validate(table.subject_ids)
    return assignment


def sample_context(
    pool: Sequence[tuple[str, int]],
    k: int,
    global_seed: int,
    target_id: str,
    source_pool: str = "",
) -> ContextSet:
    """Sample k labeled examples uniformly without replacement.

    The stream seed derives from (global seed, target id), so two calls for
    the same target always return the same examples in the same order, and
    distinct targets draw independently.
    """
    if k > len(pool):
        raise PoolTooSmall(f"k={k} exceeds pool size {len(pool)}")
    if any(pid == target_id for pid, _ in pool):
        raise TargetInPool(f"target {target_id!r} present in its own pool")
    rng = SplitMix64(derive_stream_seed(global_seed, target_id))
    indices = list(range(len(pool)))
    rng.shuffle(indices)
    examples = tuple(pool[i] for i in indices[:k])
    return ContextSet(target_id=target_id, examples=examples, k=k, source_pool=source_pool)


def pool_pairs(table: FeatureTable, assignment: SplitAssignment, pool_name: str) -> list[tuple[str, int]]:
    """(id, label) pairs for a pool partition, in assignment order."""
    pairs = []
    for subject_id in assignment.ids(pool_name):
        row = table.row_by_id(subject_id)
        label = table.label_of(row)
        if label is None:
            raise InvalidAssignment(f"pool subject {subject_id!r} has no label")
        pairs.append((subject_id, label))
    return pairs
