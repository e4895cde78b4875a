"""Audit datasets: feature schema, CSV ingestion and one-hot encoding."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import EmptyInputError, ParseError, SchemaError, ShapeError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
ORIENTATIONS = ("performance", "residual")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = CONTINUOUS
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise SchemaError(f"categorical column {self.name!r} has no categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"categorical column {self.name!r} has duplicate categories")
        elif self.categories:
            raise SchemaError(f"continuous column {self.name!r} cannot declare categories")

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == CATEGORICAL else 1


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature columns, each continuous or categorical."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")

    @classmethod
    def continuous(cls, names: Sequence[str]) -> "FeatureSchema":
        return cls(tuple(Column(n) for n in names))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def width(self) -> int:
        """Number of columns after one-hot expansion."""
        return sum(c.width for c in self.columns)

    def encoding_map(self) -> list[tuple[str, str | None]]:
        """Expanded column index -> (original column, category or None)."""
        out: list[tuple[str, str | None]] = []
        for col in self.columns:
            if col.kind == CATEGORICAL:
                out.extend((col.name, cat) for cat in col.categories)
            else:
                out.append((col.name, None))
        return out

    def expanded_names(self) -> list[str]:
        return [name if cat is None else f"{name}={cat}" for name, cat in self.encoding_map()]

    def to_dict(self) -> dict[str, Any]:
        cols = []
        for c in self.columns:
            d: dict[str, Any] = {"name": c.name, "kind": c.kind}
            if c.kind == CATEGORICAL:
                d["categories"] = list(c.categories)
            cols.append(d)
        return {"columns": cols}

    @classmethod
    def from_dict(cls, spec: dict[str, Any]) -> "FeatureSchema":
        try:
            cols = spec["columns"]
        except (KeyError, TypeError):
            raise SchemaError("schema must contain a 'columns' list") from None
        out = []
        for c in cols:
            if "name" not in c:
                raise SchemaError(f"schema column without a name: {c!r}")
            out.append(Column(str(c["name"]), c.get("kind", CONTINUOUS),
                              tuple(str(v) for v in c.get("categories", ()))))
        return cls(tuple(out))


@dataclass(frozen=True, eq=False)
class AuditDataset:
    """Numeric feature matrix plus one performance score per row.

    ``orientation`` is ``"performance"`` when higher scores are better
    (accuracy-style, bounded to [0, 1]) and ``"residual"`` when scores are
    signed errors.
    """

    schema: FeatureSchema
    features: np.ndarray
    scores: np.ndarray
    orientation: str = "performance"
    encoding_map: tuple[tuple[str, str | None], ...] = field(default=())

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.scores, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {X.shape}")
        if X.shape[0] == 0:
            raise EmptyInputError("dataset has no rows")
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"{X.shape[0]} feature rows but {y.shape[0]} scores")
        if X.shape[1] != self.schema.width:
            raise ShapeError(f"schema expands to {self.schema.width} columns, matrix has {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ParseError("features contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise ParseError("scores contain non-finite values")
        if self.orientation not in ORIENTATIONS:
            raise SchemaError(f"orientation must be one of {ORIENTATIONS}")
        if self.orientation == "performance" and (y.min() < 0.0 or y.max() > 1.0):
            raise ParseError("performance scores must lie in [0, 1]")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "scores", y)
        object.__setattr__(self, "encoding_map", tuple(self.schema.encoding_map()))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "AuditDataset":
        """Dataset restricted to (or resampled by) ``rows``."""
        rows = np.asarray(rows, dtype=np.intp)
        return AuditDataset(self.schema, self.features[rows], self.scores[rows], self.orientation)

    def decode(self) -> list[list[Any]]:
        """Rebuild the raw mixed-type rows from the one-hot matrix."""
        return decode_rows(self.features, self.schema)

    def ambient_bounds(self) -> list[tuple[float, float]]:
        """Observed [min, max] of every expanded column."""
        return [(float(lo), float(hi)) for lo, hi in zip(self.features.min(axis=0), self.features.max(axis=0))]


def one_hot_encode(raw_rows: Sequence[Sequence[Any]], schema: FeatureSchema):
    """Expand mixed rows to a numeric matrix.

    Continuous values are copied; a categorical column with ``k`` declared
    categories becomes ``k`` indicator columns in declared order.

    Returns
    -------
    (np.ndarray, list)
        The ``n x width`` matrix and the encoding map.
    """
    width = schema.width
    out = np.zeros((len(raw_rows), width), dtype=float)
    lookup = [
        {cat: i for i, cat in enumerate(col.categories)} if col.kind == CATEGORICAL else None
        for col in schema.columns
    ]
    for r, row in enumerate(raw_rows):
        if len(row) != len(schema.columns):
            raise ShapeError(f"row {r + 1} has {len(row)} values, schema has {len(schema.columns)} columns")
        j = 0
        for col, table, value in zip(schema.columns, lookup, row):
            if table is None:
                out[r, j] = float(value)
                j += 1
            else:
                key = str(value)
                if key not in table:
                    raise ParseError(f"row {r + 1}, column {col.name!r}: unknown category {key!r}",
                                     row=r + 1, column=col.name)
                out[r, j + table[key]] = 1.0
                j += len(table)
    return out, schema.encoding_map()


def decode_rows(matrix: np.ndarray, schema: FeatureSchema) -> list[list[Any]]:
    rows = []
    for vec in np.asarray(matrix, dtype=float):
        row: list[Any] = []
        j = 0
        for col in schema.columns:
            if col.kind == CATEGORICAL:
                block = vec[j:j + col.width]
                row.append(col.categories[int(np.argmax(block))])
            else:
                row.append(float(vec[j]))
            j += col.width
        rows.append(row)
    return rows


def shuffle_rows(dataset: AuditDataset, seed: int) -> AuditDataset:
    """Permute rows deterministically; features and scores move together."""
    perm = np.random.default_rng(seed).permutation(dataset.n)
    return dataset.take(perm)


def load_schema(path) -> tuple[FeatureSchema, str, str]:
    """Read a JSON schema sidecar.

    Returns the schema, the score column name and the score orientation.
    """
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(spec, dict) or "score_column" not in spec:
        raise SchemaError(f"{path}: schema needs a 'score_column' entry")
    orientation = spec.get("orientation", "performance")
    if orientation not in ORIENTATIONS:
        raise SchemaError(f"{path}: orientation must be one of {ORIENTATIONS}")
    return FeatureSchema.from_dict(spec), str(spec["score_column"]), orientation


def write_schema(path, schema: FeatureSchema, score_column: str, orientation: str = "performance"):
    spec = schema.to_dict()
    spec["score_column"] = score_column
    spec["orientation"] = orientation
    Path(path).write_text(json.dumps(spec, indent=2) + "\n", encoding="utf-8")


def _parse_float(text: str, row: int, column: str) -> float:
    if text.strip() == "":
        raise ParseError(f"row {row}, column {column!r}: missing value", row=row, column=column)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {column!r}: not a number: {text!r}",
                         row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}", row=row, column=column)
    return value


def load_csv(path, schema: FeatureSchema, score_column: str,
             orientation: str = "performance") -> AuditDataset:
    """Read a comma-separated UTF-8 file with a header row.

    Every schema column and ``score_column`` must be present in the
    header; other columns are ignored. Rows are kept in file order and
    missing cells are rejected rather than imputed.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        wanted = schema.names + [score_column]
        missing = [name for name in wanted if name not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = {name: header.index(name) for name in wanted}
        raw_rows, scores = [], []
        for r, record in enumerate(reader, start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise ParseError(f"row {r}: expected {len(header)} fields, got {len(record)}", row=r)
            row: list[Any] = []
            for col in schema.columns:
                cell = record[pos[col.name]]
                if col.kind == CATEGORICAL:
                    label = cell.strip()
                    if label not in col.categories:
                        raise ParseError(f"row {r}, column {col.name!r}: unknown category {label!r}",
                                         row=r, column=col.name)
                    row.append(label)
                else:
                    row.append(_parse_float(cell, r, col.name))
            raw_rows.append(row)
            scores.append(_parse_float(record[pos[score_column]], r, score_column))
    if not raw_rows:
        raise EmptyInputError(f"{path}: no data rows")
    matrix, _ = one_hot_encode(raw_rows, schema)
    y = np.asarray(scores)
    if orientation == "performance":
        bad = np.flatnonzero((y < 0.0) | (y > 1.0))
        if bad.size:
            r = int(bad[0]) + 1
            raise ParseError(f"row {r}, column {score_column!r}: performance score outside [0, 1]",
                             row=r, column=score_column)
    return AuditDataset(schema, matrix, y, orientation)


def write_csv(path, dataset: AuditDataset, score_column: str = "score"):
    """Write a dataset back out in the layout ``load_csv`` reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.schema.names + [score_column])
        for row, score in zip(dataset.decode(), dataset.scores):
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row] + [repr(float(score))])
