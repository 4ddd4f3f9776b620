"""Late fusion of class-probability vectors and the cross-validated metrics harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_GRID = tuple(i / 10 for i in range(11))
METRICS = ("tpr", "tnr", "ba", "mcc")


class FusionError(ValueError):
    pass


class MissingFoldError(FusionError):
    def __init__(self, missing: dict[str, list[int]]):
        self.missing = missing
        detail = "; ".join(f"{name}: folds {folds}" for name, folds in missing.items())
        super().__init__(f"missing fold outputs ({detail})")


def check_probabilities(p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise FusionError(f"expected (n, 2) probabilities, got shape {p.shape}")
    if np.any(p < 0) or np.any(p > 1) or np.any(np.abs(p.sum(axis=1) - 1) > tol):
        raise FusionError("rows must be probability vectors")
    return p


def fuse(p_clinical, p_imaging, alpha: float) -> np.ndarray:
    """``alpha * p_clinical + (1 - alpha) * p_imaging``, row by row."""
    if not 0.0 <= alpha <= 1.0:
        raise FusionError(f"alpha must lie in [0, 1], got {alpha}")
    pc, pi = np.asarray(p_clinical, dtype=np.float64), np.asarray(p_imaging, dtype=np.float64)
    if pc.shape != pi.shape:
        raise FusionError(f"shape mismatch: {pc.shape} vs {pi.shape}")
    return alpha * pc + (1.0 - alpha) * pi


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def predict(probabilities) -> np.ndarray:
    """Argmax over two classes; an exact tie goes to class 0."""
    p = np.asarray(probabilities, dtype=np.float64)
    return (p[:, 1] > p[:, 0]).astype(np.int64)


def confusion(probabilities, labels) -> ConfusionCounts:
    pred = predict(probabilities)
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    if pred.shape[0] != y.shape[0]:
        raise FusionError(f"{pred.shape[0]} predictions for {y.shape[0]} labels")
    return ConfusionCounts(tp=int(((pred == 1) & (y == 1)).sum()), fp=int(((pred == 1) & (y == 0)).sum()),
                           tn=int(((pred == 0) & (y == 0)).sum()), fn=int(((pred == 0) & (y == 1)).sum()))


@dataclass
class Evaluation:
    counts: ConfusionCounts
    tpr: float
    tnr: float
    ba: float
    mcc: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {**asdict(self.counts), "tpr": self.tpr, "tnr": self.tnr, "ba": self.ba,
                "mcc": self.mcc, "flags": list(self.flags)}


def metrics(counts: ConfusionCounts) -> Evaluation:
    """TPR, TNR, balanced accuracy and MCC; zero denominators give 0 plus a flag."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    flags = []
    if tp + fn:
        tpr = tp / (tp + fn)
    else:
        tpr = 0.0
        flags.append("tpr: no positive samples")
    if tn + fp:
        tnr = tn / (tn + fp)
    else:
        tnr = 0.0
        flags.append("tnr: no negative samples")
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom:
        mcc = (tp * tn - fp * fn) / math.sqrt(denom)
    else:
        mcc = 0.0
        flags.append("mcc: zero denominator")
    return Evaluation(counts, tpr, tnr, (tpr + tnr) / 2, mcc, flags)


def evaluate(probabilities, labels) -> Evaluation:
    return metrics(confusion(probabilities, labels))


@dataclass
class MetricsReport:
    """Per-fold evaluations for one experiment, one entry per grid point.

    Unimodal reports have ``alphas == [None]``.
    """

    experiment: str
    alphas: list
    folds: list[int]
    per_fold: list[list[Evaluation]]          # [fold][alpha index]
    mean: list[dict[str, float]] = field(default_factory=list)
    best_ba_alpha: float | None = None
    best_mcc_alpha: float | None = None

    def summary(self, alpha=None) -> dict[str, float]:
        idx = 0 if alpha is None else self.alphas.index(alpha)
        return self.mean[idx]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "alphas": self.alphas,
            "best_ba_alpha": self.best_ba_alpha,
            "best_mcc_alpha": self.best_mcc_alpha,
            "mean": [{"alpha": a, **m} for a, m in zip(self.alphas, self.mean)],
            "folds": [{"fold": f, "results": [{"alpha": a, **e.to_dict()} for a, e in zip(self.alphas, evs)]}
                      for f, evs in zip(self.folds, self.per_fold)],
        }


def cv_aggregate(per_fold: list[list[Evaluation]]) -> list[dict[str, float]]:
    """Unweighted mean of each metric across folds, per grid point."""
    if not per_fold:
        raise FusionError("no fold reports to aggregate")
    n_points = len(per_fold[0])
    out = []
    for k in range(n_points):
        out.append({m: float(np.mean([getattr(fold[k], m) for fold in per_fold])) for m in METRICS})
    return out


def _argmax_alpha(alphas: list[float], means: list[dict[str, float]], metric: str) -> float:
    best, best_val = None, -math.inf
    for a, m in sorted(zip(alphas, means), key=lambda t: t[0]):
        if m[metric] > best_val:
            best, best_val = a, m[metric]
    return best


def _check_folds(named: dict[str, dict[int, np.ndarray]], labels: dict[int, np.ndarray]) -> list[int]:
    folds = sorted(set(labels).union(*(set(v) for v in named.values())))
    missing = {name: [f for f in folds if f not in outputs] for name, outputs in named.items()}
    missing["labels"] = [f for f in folds if f not in labels]
    missing = {k: v for k, v in missing.items() if v}
    if missing:
        raise MissingFoldError(missing)
    return folds


def evaluate_folds(experiment: str, probabilities: dict[int, np.ndarray],
                   labels: dict[int, np.ndarray]) -> MetricsReport:
    folds = _check_folds({experiment: probabilities}, labels)
    per_fold = [[evaluate(probabilities[f], labels[f])] for f in folds]
    return MetricsReport(experiment, [None], folds, per_fold, cv_aggregate(per_fold))


def alpha_sweep(p_clinical: dict[int, np.ndarray], p_imaging: dict[int, np.ndarray],
                labels: dict[int, np.ndarray], grid=DEFAULT_GRID, experiment: str = "multimodal") -> MetricsReport:
    """Evaluate the fused prediction at every grid point on every fold.

    Best-alpha ties resolve to the smaller alpha.
    """
    folds = _check_folds({"clinical": p_clinical, "imaging": p_imaging}, labels)
    grid = [float(a) for a in grid]
    if not grid:
        raise FusionError("empty alpha grid")
    per_fold = [[evaluate(fuse(p_clinical[f], p_imaging[f], a), labels[f]) for a in grid] for f in folds]
    report = MetricsReport(experiment, grid, folds, per_fold, cv_aggregate(per_fold))
    report.best_ba_alpha = _argmax_alpha(grid, report.mean, "ba")
    report.best_mcc_alpha = _argmax_alpha(grid, report.mean, "mcc")
    return report


def write_report_json(reports: dict[str, MetricsReport], path) -> None:
    payload = {name: r.to_dict() for name, r in reports.items()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_sweep_csv(report: MetricsReport, path) -> None:
    """Flat table for alpha-vs-metric curves: one row per (alpha, fold) plus mean rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["alpha", "fold", "tp", "fp", "tn", "fn", *METRICS])
        for k, a in enumerate(report.alphas):
            for f, evs in zip(report.folds, report.per_fold):
                e = evs[k]
                c = e.counts
                writer.writerow([a, f, c.tp, c.fp, c.tn, c.fn, *(repr(getattr(e, m)) for m in METRICS)])
        for a, m in zip(report.alphas, report.mean):
            writer.writerow([a, "mean", "", "", "", "", *(repr(m[x]) for x in METRICS)])


TABLE_ROWS = (
    ("imaging", "Unimodal Imaging"),
    ("clinical-baseline", "Unimodal Clinical"),
    ("clinical-naim", "Unimodal Missing-Aware Clinical"),
    ("multimodal", "Multimodal"),
)


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Four-row summary in percent; the multimodal row uses the best-BA alpha."""
    lines = [f"{'Experiment':<34}{'TNR (%)':>9}{'TPR (%)':>9}{'BA (%)':>9}{'MCC (%)':>9}"]
    for key, label in TABLE_ROWS:
        report = reports.get(key)
        if report is None:
            lines.append(f"{label:<34}{'n/a':>9}{'n/a':>9}{'n/a':>9}{'n/a':>9}")
            continue
        alpha = report.best_ba_alpha if report.alphas != [None] else None
        m = report.summary(alpha)
        if alpha is not None:
            label = f"{label} (alpha={alpha:.1f})"
        lines.append(f"{label:<34}" + "".join(f"{100 * m[x]:>9.2f}" for x in ("tnr", "tpr", "ba", "mcc")))
    return "\n".join(lines)
