"""CSV ingestion and the two encoded views of the clinical table.

The per-feature view (one column per schema feature: category code, ordinal
rank or z-score) feeds the missing-aware model. The expanded view replaces
each categorical feature by its one-hot columns and feeds the imputation
baseline. Missing cells keep a placeholder value in both views; the
``observed`` mask is the only authority on what may be read.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .schema import FeatureSchema, SchemaError

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "NA")
PLACEHOLDER = np.nan


class DataLoadError(ValueError):
    pass


@dataclass
class RawDataset:
    schema: FeatureSchema
    ids: list[str]
    values: np.ndarray            # object (n, F); str for categorical/ordinal, float for numerical
    observed: np.ndarray          # bool (n, F)
    labels: np.ndarray | None     # int (n,) or None at inference

    def __len__(self) -> int:
        return len(self.ids)


def _is_missing(cell: str) -> bool:
    return cell in MISSING_TOKENS


def load_csv(data_path, schema_path=None, schema: FeatureSchema | None = None) -> RawDataset:
    """Read a patient table; blank or ``NA`` cells are recorded as missing.

    Row numbers in error messages count data rows from 1, header excluded.
    """
    if schema is None:
        if schema_path is None:
            raise ValueError("either schema_path or schema is required")
        schema = FeatureSchema.load(schema_path)
    with open(data_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataLoadError(f"{data_path}: empty file")
    header, body = rows[0], rows[1:]
    if not header or header[0] != "patient_id":
        raise DataLoadError(f"{data_path}: first column must be patient_id")
    columns = header[1:]
    has_label = bool(columns) and columns[-1] == "label"
    if has_label:
        columns = columns[:-1]
    unknown = [c for c in columns if c not in schema.names]
    if unknown:
        raise DataLoadError(f"{data_path}: unknown column {unknown[0]!r}")
    absent = [n for n in schema.names if n not in columns]
    if absent:
        raise DataLoadError(f"{data_path}: schema column {absent[0]!r} missing from header")
    order = [columns.index(n) + 1 for n in schema.names]

    n, n_feat = len(body), len(schema)
    values = np.empty((n, n_feat), dtype=object)
    observed = np.zeros((n, n_feat), dtype=bool)
    labels = np.zeros(n, dtype=np.int64) if has_label else None
    ids = []
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataLoadError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0])
        for j, (feat, pos) in enumerate(zip(schema, order)):
            cell = row[pos]
            if _is_missing(cell):
                values[r - 1, j] = None
                continue
            if feat.kind == "numerical":
                try:
                    num = float(cell)
                except ValueError:
                    raise DataLoadError(f"row {r}, column {feat.name!r}: unparsable number {cell!r}") from None
                if not np.isfinite(num):
                    raise DataLoadError(f"row {r}, column {feat.name!r}: non-finite number {cell!r}")
                values[r - 1, j] = num
            else:
                if cell not in feat.categories:
                    raise DataLoadError(
                        f"row {r}, column {feat.name!r}: value {cell!r} not in {list(feat.categories)}")
                values[r - 1, j] = cell
            observed[r - 1, j] = True
        if has_label:
            if row[-1] not in ("0", "1"):
                raise DataLoadError(f"row {r}, column 'label': expected 0 or 1, got {row[-1]!r}")
            labels[r - 1] = int(row[-1])
    return RawDataset(schema, ids, values, observed, labels)


def load_embeddings(path, ids: list[str] | None = None, width: int | None = None) -> np.ndarray:
    """Read ``patient_id, e0..e{w-1}`` rows, reordered to match ``ids`` if given."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "patient_id":
        raise DataLoadError(f"{path}: first column must be patient_id")
    w = len(rows[0]) - 1
    if width is not None and w != width:
        raise DataLoadError(f"{path}: embedding width {w}, expected {width}")
    table = {}
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != w + 1:
            raise DataLoadError(f"{path} row {r}: expected {w + 1} fields, got {len(row)}")
        try:
            table[row[0]] = np.array([float(x) for x in row[1:]], dtype=np.float64)
        except ValueError:
            raise DataLoadError(f"{path} row {r}: unparsable embedding value") from None
    if ids is None:
        ids = [row[0] for row in rows[1:]]
    missing = [i for i in ids if i not in table]
    if missing:
        raise DataLoadError(f"{path}: no embedding for patient {missing[0]!r}")
    return np.stack([table[i] for i in ids]) if ids else np.zeros((0, w))


@dataclass(frozen=True)
class Column:
    feature: int
    label: str
    category: int | None = None    # one-hot slot, None for rank / z-score columns


@dataclass
class TabularDataset:
    schema: FeatureSchema
    ids: list[str]
    values: np.ndarray             # float (n, F), per-feature view
    observed: np.ndarray           # bool (n, F)
    labels: np.ndarray | None
    stats: dict[str, tuple[float, float]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def prevalence(self) -> float:
        return float(self.labels.mean()) if self.labels is not None and len(self.labels) else float("nan")

    @property
    def categorical(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.schema])

    def subset(self, rows) -> "TabularDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return replace(self, ids=[self.ids[i] for i in rows], values=self.values[rows],
                       observed=self.observed[rows],
                       labels=None if self.labels is None else self.labels[rows],
                       flags=list(self.flags))

    def with_poison(self, rng: np.random.Generator, scale: float = 1e3) -> "TabularDataset":
        """Copy with every missing cell overwritten by a random finite value."""
        values = self.values.copy()
        hidden = ~self.observed
        values[hidden] = rng.uniform(-scale, scale, size=int(hidden.sum()))
        return replace(self, values=values)

    def decode(self, row: int, feature: int) -> str | float | None:
        if not self.observed[row, feature]:
            return None
        feat = self.schema[feature]
        if feat.kind == "numerical":
            mu, sd = self.stats.get(feat.name, (0.0, 1.0))
            return float(self.values[row, feature] * sd + mu)
        return feat.categories[int(self.values[row, feature])]

    def expanded_columns(self) -> list[Column]:
        cols = []
        for j, feat in enumerate(self.schema):
            if feat.is_categorical:
                cols.extend(Column(j, f"{feat.name}={c}", k) for k, c in enumerate(feat.categories))
            else:
                cols.append(Column(j, feat.name))
        return cols

    def expanded(self) -> tuple[np.ndarray, np.ndarray, list[Column]]:
        """One-hot view: matrix, per-column observed mask, column metadata.

        A missing categorical is missing in every one of its one-hot columns.
        """
        cols = self.expanded_columns()
        n = len(self)
        matrix = np.full((n, len(cols)), PLACEHOLDER)
        mask = np.zeros((n, len(cols)), dtype=bool)
        for c, col in enumerate(cols):
            seen = self.observed[:, col.feature]
            mask[:, c] = seen
            src = self.values[seen, col.feature]
            matrix[seen, c] = (src == col.category).astype(np.float64) if col.category is not None else src
        return matrix, mask, cols


def fit_normalization(raw: RawDataset, train_rows) -> tuple[dict[str, tuple[float, float]], list[str]]:
    """Mean and population std per numerical feature over observed training cells."""
    train_rows = np.asarray(train_rows, dtype=np.intp)
    stats, flags = {}, []
    for j, feat in enumerate(raw.schema):
        if feat.kind != "numerical":
            continue
        seen = train_rows[raw.observed[train_rows, j]]
        col = np.array([raw.values[i, j] for i in seen], dtype=np.float64)
        if col.size == 0:
            stats[feat.name] = (0.0, 0.0)
            flags.append(f"{feat.name}: no observed training values, encoded as constant 0")
            continue
        mu = float(col.mean())
        sd = float(col.std())
        if sd == 0.0:
            flags.append(f"{feat.name}: constant in training rows, encoded as 0")
        stats[feat.name] = (mu, sd)
    return stats, flags


def encode(raw: RawDataset, train_rows) -> TabularDataset:
    """Encode every row with normalization statistics fitted on ``train_rows``."""
    stats, flags = fit_normalization(raw, train_rows)
    for msg in flags:
        logger.warning(msg)
    n = len(raw)
    values = np.full((n, len(raw.schema)), PLACEHOLDER)
    for j, feat in enumerate(raw.schema):
        seen = np.flatnonzero(raw.observed[:, j])
        if feat.kind == "numerical":
            mu, sd = stats[feat.name]
            col = np.array([raw.values[i, j] for i in seen], dtype=np.float64)
            values[seen, j] = (col - mu) / sd if sd > 0 else 0.0
        else:
            try:
                values[seen, j] = [feat.code_of(raw.values[i, j]) for i in seen]
            except SchemaError as exc:
                raise DataLoadError(str(exc)) from None
    labels = None if raw.labels is None else raw.labels.copy()
    return TabularDataset(raw.schema, list(raw.ids), values, raw.observed.copy(), labels, stats, flags)
