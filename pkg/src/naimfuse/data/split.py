from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import stream


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    n_folds: int
    seed: int
    folds: tuple[Fold, ...]

    def __iter__(self):
        return iter(self.folds)

    def __len__(self) -> int:
        return len(self.folds)

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "seed": self.seed,
                "folds": [{k: getattr(f, k).tolist() for k in ("train", "val", "test")} for f in self.folds]}


def _deal(labels: np.ndarray, rows: np.ndarray, n_bins: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle each class, lay the classes end to end, deal round-robin into bins.

    One counter runs across both classes, so bin sizes differ by at most one
    and so do the per-bin positive counts.
    """
    order = []
    for cls in (1, 0):
        members = rows[labels[rows] == cls]
        order.append(members[rng.permutation(members.size)])
    order = np.concatenate(order)
    # bins[k] belongs to the k-th smallest row index
    return np.argsort(order) % n_bins, np.sort(rows)


def stratified_kfold_split(labels, folds: int = 5, seed: int = 0) -> SplitPlan:
    """Stratified test folds plus a stratified 1-of-(folds-1) validation slice.

    With 5 folds each fold is train 60% / validation 20% / test 20%.
    """
    labels = np.asarray(labels).astype(np.int64)
    if folds < 2:
        raise SplitError(f"need at least 2 folds, got {folds}")
    for cls in (0, 1):
        count = int((labels == cls).sum())
        if count < folds:
            raise SplitError(f"class {cls} has {count} samples, fewer than {folds} folds")
    rows = np.arange(labels.size)
    test_bin, sorted_rows = _deal(labels, rows, folds, stream(seed, "split", "test"))
    out = []
    for f in range(folds):
        test = sorted_rows[test_bin == f]
        rest = sorted_rows[test_bin != f]
        val_bin, rest_sorted = _deal(labels, rest, folds - 1, stream(seed, "split", "val", f))
        out.append(Fold(train=rest_sorted[val_bin != 0], val=rest_sorted[val_bin == 0], test=test))
    return SplitPlan(folds, seed, tuple(out))
