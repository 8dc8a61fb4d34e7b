"""Labeled subject-by-feature tables with explicit missing-cell semantics.

Cells keep the source text verbatim (numerics as decimal strings plus the
parsed value) so prompt rendering never drifts with float round-trips.
Tables are immutable after construction; all operations return new tables.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import BadCell, DuplicateSubject, SchemaMismatch, UnknownColumn

MISSING_SENTINELS = {"", "na", "nan"}

COLUMN_KINDS = ("numeric", "categorical", "binary", "count")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "numeric"
    unit: str | None = None
    levels: tuple[str, ...] = ()
    is_covariate: bool = False
    is_label: bool = False

    def __post_init__(self) -> None:
        if self.kind not in COLUMN_KINDS:
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.is_label and self.is_covariate:
            raise ValueError(f"label column {self.name!r} cannot be a covariate")


@dataclass(frozen=True)
class Cell:
    raw: str
    value: float | int | str | None
    missing: bool

    @staticmethod
    def absent() -> "Cell":
        return Cell(raw="", value=None, missing=True)

    @staticmethod
    def present(raw: str, value: float | int | str) -> "Cell":
        return Cell(raw=raw, value=value, missing=False)


@dataclass(frozen=True)
class SubjectRow:
    subject_id: str
    cells: tuple[Cell, ...]


@dataclass(frozen=True)
class TableSchema:
    """Column specs in source (CSV) order plus the id/label column names."""

    columns: tuple[ColumnSpec, ...]
    subject_id_column: str
    label_column: str

    @staticmethod
    def from_json(source: str | Path | dict) -> "TableSchema":
        if isinstance(source, (str, Path)):
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        else:
            doc = source
        columns = tuple(
            ColumnSpec(
                name=entry["name"],
                kind=entry.get("kind", "numeric"),
                unit=entry.get("unit"),
                levels=tuple(entry.get("levels", ())),
                is_covariate=bool(entry.get("is_covariate", False)),
                is_label=bool(entry.get("is_label", False)),
            )
            for entry in doc["columns"]
        )
        return TableSchema(
            columns=columns,
            subject_id_column=doc["subject_id_column"],
            label_column=doc["label_column"],
        )

    def to_json(self) -> dict:
        return {
            "subject_id_column": self.subject_id_column,
            "label_column": self.label_column,
            "columns": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "unit": c.unit,
                    "levels": list(c.levels),
                    "is_covariate": c.is_covariate,
                    "is_label": c.is_label,
                }
                for c in self.columns
            ],
        }


def canonical_column_order(
    columns: Sequence[ColumnSpec], subject_id_column: str, label_column: str
) -> tuple[ColumnSpec, ...]:
    """Canonical order: subject id, covariates, features, label.

    Covariates and features each keep their relative schema order. A single
    canonical order keeps prompts byte-reproducible across splits.
    """
    by_name = {c.name: c for c in columns}
    if subject_id_column not in by_name:
        raise SchemaMismatch(f"subject id column {subject_id_column!r} not in schema")
    if label_column not in by_name:
        raise SchemaMismatch(f"label column {label_column!r} not in schema")
    id_spec = by_name[subject_id_column]
    covariates = [c for c in columns if c.is_covariate and c.name != subject_id_column]
    features = [
        c
        for c in columns
        if not c.is_covariate and c.name not in (subject_id_column, label_column)
    ]
    label = by_name[label_column]
    return (id_spec, *covariates, *features, label)


@dataclass(frozen=True)
class FeatureTable:
    columns: tuple[ColumnSpec, ...]
    rows: tuple[SubjectRow, ...]
    label_column: str
    subject_id_column: str
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        labels = [c for c in self.columns if c.is_label]
        if len(labels) != 1 or labels[0].name != self.label_column:
            raise ValueError("exactly one column must carry is_label")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        seen: set[str] = set()
        for row in self.rows:
            if len(row.cells) != len(self.columns):
                raise ValueError(f"row {row.subject_id!r} has wrong cell count")
            if row.subject_id in seen:
                raise DuplicateSubject(f"duplicate subject id {row.subject_id!r}")
            seen.add(row.subject_id)
        label_idx = names.index(self.label_column)
        for row in self.rows:
            cell = row.cells[label_idx]
            if not cell.missing and cell.value not in (0, 1):
                raise ValueError(
                    f"label for {row.subject_id!r} must be 0 or 1, got {cell.raw!r}"
                )
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    # --- lookups ---

    def column_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownColumn(f"no column named {name!r}") from None

    def column(self, name: str) -> ColumnSpec:
        return self.columns[self.column_index(name)]

    def cell(self, row: SubjectRow, name: str) -> Cell:
        return row.cells[self.column_index(name)]

    def row_by_id(self, subject_id: str) -> SubjectRow:
        for row in self.rows:
            if row.subject_id == subject_id:
                return row
        raise KeyError(subject_id)

    def label_of(self, row: SubjectRow) -> int | None:
        cell = self.cell(row, self.label_column)
        return None if cell.missing else int(cell.value)  # type: ignore[arg-type]

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(r.subject_id for r in self.rows)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.is_covariate)

    @property
    def feature_names(self) -> tuple[str, ...]:
        """All non-id, non-label columns (covariates included)."""
        return tuple(
            c.name
            for c in self.columns
            if c.name not in (self.subject_id_column, self.label_column)
        )

    @property
    def selectable_feature_names(self) -> tuple[str, ...]:
        """Feature columns eligible for ranking (covariates excluded)."""
        return tuple(
            c.name
            for c in self.columns
            if not c.is_covariate
            and c.name not in (self.subject_id_column, self.label_column)
        )

    def schema(self) -> TableSchema:
        """Schema matching this table's (canonical) column order."""
        return TableSchema(
            columns=self.columns,
            subject_id_column=self.subject_id_column,
            label_column=self.label_column,
        )


def _parse_cell(raw: str, spec: ColumnSpec, row_number: int) -> Cell:
    text = raw.strip()
    if text.lower() in MISSING_SENTINELS:
        return Cell.absent()
    if spec.kind == "numeric":
        try:
            return Cell.present(text, float(text))
        except ValueError:
            raise BadCell(row_number, spec.name, raw, "not numeric") from None
    if spec.kind == "count":
        try:
            return Cell.present(text, int(text))
        except ValueError:
            raise BadCell(row_number, spec.name, raw, "not an integer count") from None
    if spec.kind == "binary":
        if text not in ("0", "1"):
            raise BadCell(row_number, spec.name, raw, "binary cells must be 0 or 1")
        return Cell.present(text, int(text))
    # categorical
    if spec.levels and text not in spec.levels:
        raise BadCell(row_number, spec.name, raw, f"not in levels {list(spec.levels)}")
    return Cell.present(text, text)


def load_table(source: str | bytes | Path | io.IOBase, schema: TableSchema) -> FeatureTable:
    """Parse a CSV byte/text stream against a schema.

    The header must match the schema column names in order. Empty string,
    "NA", and "NaN" (case-insensitive) parse as Missing; anything else that
    fails its column kind is a hard BadCell error.
    """
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch("empty input: no header row") from None
    expected = [c.name for c in schema.columns]
    if header != expected:
        raise SchemaMismatch(f"header {header} does not match schema {expected}")

    canonical = canonical_column_order(
        schema.columns, schema.subject_id_column, schema.label_column
    )
    source_index = {c.name: i for i, c in enumerate(schema.columns)}
    id_source_idx = source_index[schema.subject_id_column]

    rows: list[SubjectRow] = []
    seen: set[str] = set()
    for row_number, record in enumerate(reader, start=2):
        if len(record) != len(schema.columns):
            raise BadCell(
                row_number, "<row>", ",".join(record),
                f"expected {len(schema.columns)} cells, got {len(record)}",
            )
        subject_id = record[id_source_idx].strip()
        if not subject_id:
            raise BadCell(row_number, schema.subject_id_column, record[id_source_idx],
                          "subject id may not be empty")
        if subject_id in seen:
            raise DuplicateSubject(f"duplicate subject id {subject_id!r} at row {row_number}")
        seen.add(subject_id)
        cells = tuple(
            _parse_cell(record[source_index[spec.name]], spec, row_number)
            for spec in canonical
        )
        rows.append(SubjectRow(subject_id=subject_id, cells=cells))

    return FeatureTable(
        columns=canonical,
        rows=tuple(rows),
        label_column=schema.label_column,
        subject_id_column=schema.subject_id_column,
    )


def write_table(table: FeatureTable) -> str:
    """Render a table back to CSV (canonical column order, Missing as "")."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([c.name for c in table.columns])
    for row in table.rows:
        writer.writerow(["" if cell.missing else cell.raw for cell in row.cells])
    return buf.getvalue()


def filter_complete(table: FeatureTable) -> FeatureTable:
    """Keep only rows with zero Missing cells; order preserved."""
    kept = tuple(r for r in table.rows if not any(c.missing for c in r.cells))
    return FeatureTable(
        columns=table.columns,
        rows=kept,
        label_column=table.label_column,
        subject_id_column=table.subject_id_column,
    )


def select_columns(table: FeatureTable, names: Iterable[str]) -> FeatureTable:
    """Slice to the given feature columns.

    The subject id, covariates, and label are always retained; output order
    is id, covariates, requested features (first-occurrence order), label.
    Names that refer to always-retained columns are ignored.
    """
    always = {table.subject_id_column, table.label_column, *table.covariate_names}
    wanted: list[str] = []
    for name in names:
        table.column_index(name)  # raises UnknownColumn
        if name in always or name in wanted:
            continue
        wanted.append(name)
    ordered_names = [
        table.subject_id_column,
        *table.covariate_names,
        *wanted,
        table.label_column,
    ]
    indices = [table.column_index(n) for n in ordered_names]
    columns = tuple(table.columns[i] for i in indices)
    rows = tuple(
        SubjectRow(subject_id=r.subject_id, cells=tuple(r.cells[i] for i in indices))
        for r in table.rows
    )
    return FeatureTable(
        columns=columns,
        rows=rows,
        label_column=table.label_column,
        subject_id_column=table.subject_id_column,
    )


def missing_fraction(row: SubjectRow, table: FeatureTable) -> float:
    """Fraction of Missing feature cells (id and label excluded)."""
    feature_idx = [table.column_index(n) for n in table.feature_names]
    if not feature_idx:
        return 0.0
    n_missing = sum(1 for i in feature_idx if row.cells[i].missing)
    return n_missing / len(feature_idx)
