"""Imputation baselines for the clinical MLP.

Both imputers are fitted on training rows only and fill every row passed in,
returning a new dataset whose filled cells are marked observed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import TabularDataset

logger = logging.getLogger(__name__)


@dataclass
class ImputationReport:
    method: str
    filled: dict[str, int] = field(default_factory=dict)
    fallbacks: list[str] = field(default_factory=list)

    def summary(self) -> str:
        total = sum(self.filled.values())
        parts = ", ".join(f"{k}={v}" for k, v in self.filled.items() if v)
        line = f"{self.method}: filled {total} cells" + (f" ({parts})" if parts else "")
        if self.fallbacks:
            line += f"; {len(self.fallbacks)} fallback(s)"
        return line


def nan_euclidean(a: np.ndarray, a_seen: np.ndarray, b: np.ndarray, b_seen: np.ndarray) -> np.ndarray:
    """Distances from one row ``a`` to every row of ``b`` over mutually observed columns.

    The squared sum is rescaled by ``total / usable`` columns. Pairs with no
    usable column get ``inf``.
    """
    both = b_seen & a_seen[None, :]
    usable = both.sum(axis=1)
    diff = np.where(both, b - np.where(a_seen, a, 0.0)[None, :], 0.0)
    sq = (diff * diff).sum(axis=1)
    total = a.shape[0]
    out = np.full(b.shape[0], np.inf)
    ok = usable > 0
    out[ok] = np.sqrt(sq[ok] * (total / usable[ok]))
    return out


def knn_impute(data: TabularDataset, k: int, train_rows) -> tuple[TabularDataset, ImputationReport]:
    """Fill missing numerical cells with the mean of the ``k`` nearest training rows.

    Only training rows observed in the target column are candidates; ties in
    distance go to the lower row index. A cell with no candidate at finite
    distance gets the training-column mean.
    """
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    train_rows = np.asarray(train_rows, dtype=np.intp)
    num = np.array([f.kind == "numerical" for f in data.schema])
    cols = np.flatnonzero(num)
    report = ImputationReport("knn", {data.schema[j].name: 0 for j in cols})
    values, observed = data.values.copy(), data.observed.copy()
    if cols.size == 0:
        return replace(data, values=values, observed=observed), report

    ref = data.values[np.ix_(train_rows, cols)]
    ref_seen = data.observed[np.ix_(train_rows, cols)]
    col_means = {}
    for c, j in enumerate(cols):
        seen = ref_seen[:, c]
        col_means[j] = float(ref[seen, c].mean()) if seen.any() else 0.0

    for i in np.flatnonzero((~data.observed[:, cols]).any(axis=1)):
        dist = nan_euclidean(data.values[i, cols], data.observed[i, cols], ref, ref_seen)
        for c, j in enumerate(cols):
            if data.observed[i, j]:
                continue
            cand = np.flatnonzero(ref_seen[:, c] & np.isfinite(dist))
            name = data.schema[j].name
            if cand.size == 0:
                values[i, j] = col_means[j]
                report.fallbacks.append(f"row {data.ids[i]}, {name}: no neighbor, used training mean")
            else:
                # train_rows may be unsorted; tie-break on the dataset row index
                order = np.lexsort((train_rows[cand], dist[cand]))
                chosen = cand[order[:k]]
                values[i, j] = float(ref[chosen, c].mean())
            observed[i, j] = True
            report.filled[name] += 1
    if report.fallbacks:
        logger.warning("knn_impute: %d cell(s) fell back to the training mean", len(report.fallbacks))
    return replace(data, values=values, observed=observed, flags=data.flags + report.fallbacks), report


def most_frequent_impute(data: TabularDataset, train_rows) -> tuple[TabularDataset, ImputationReport]:
    """Fill categorical and ordinal cells with the modal training category.

    Ties go to the category listed first in the schema; a column with no
    observed training cell falls back to the first category.
    """
    train_rows = np.asarray(train_rows, dtype=np.intp)
    values, observed = data.values.copy(), data.observed.copy()
    report = ImputationReport("most-frequent")
    for j, feat in enumerate(data.schema):
        if feat.kind == "numerical":
            continue
        report.filled[feat.name] = 0
        seen = data.observed[train_rows, j]
        codes = data.values[train_rows[seen], j].astype(np.intp)
        if codes.size == 0:
            mode = 0
            report.fallbacks.append(f"{feat.name}: entirely missing in training, used {feat.categories[0]!r}")
        else:
            counts = np.bincount(codes, minlength=len(feat.categories))
            mode = int(np.argmax(counts))   # argmax returns the first maximum
        hole = ~data.observed[:, j]
        values[hole, j] = mode
        observed[hole, j] = True
        report.filled[feat.name] = int(hole.sum())
    for msg in report.fallbacks:
        logger.warning(msg)
    return replace(data, values=values, observed=observed, flags=data.flags + report.fallbacks), report
