"""Fold-level experiment runners shared by the CLI and the acceptance suite."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data.dataset import RawDataset, encode
from .data.impute import ImputationReport, knn_impute, most_frequent_impute
from .data.split import Fold, SplitPlan
from .models import CLINICAL_HIDDEN, IMAGING_HIDDEN, MlpConfig, MlpModel, NaimBatch, NaimConfig, NaimModel
from .models.base import Module
from .rng import SeedStreams
from .training import TrainConfig, TrainResult, train_model

logger = logging.getLogger(__name__)

EXPERIMENTS = ("imaging", "clinical-baseline", "clinical-naim")
DEFAULT_KNN_K = 5


def preset(experiment: str, **overrides) -> TrainConfig:
    if experiment == "imaging":
        return TrainConfig.imaging(**overrides)
    if experiment == "clinical-baseline":
        return TrainConfig.clinical_baseline(**overrides)
    if experiment == "clinical-naim":
        return TrainConfig.naim(**overrides)
    raise ValueError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")


@dataclass
class FoldOutput:
    experiment: str
    fold: int
    ids: dict[str, list[str]]
    labels: dict[str, np.ndarray]
    proba: dict[str, np.ndarray]
    result: TrainResult
    imputation: list[ImputationReport] = field(default_factory=list)

    @property
    def model(self) -> Module:
        return self.result.model


def standardize_embeddings(embeddings: np.ndarray, train_rows) -> np.ndarray:
    ref = embeddings[train_rows]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (embeddings - mu) / sd


def baseline_inputs(raw: RawDataset, fold: Fold, k: int = DEFAULT_KNN_K):
    """Encode, impute (kNN numerical, mode categorical/ordinal) and expand to one-hot."""
    data = encode(raw, fold.train)
    data, knn_report = knn_impute(data, k, fold.train)
    data, mode_report = most_frequent_impute(data, fold.train)
    matrix, mask, _ = data.expanded()
    assert mask.all()
    return matrix, [knn_report, mode_report]


def run_fold(experiment: str, raw: RawDataset, embeddings: np.ndarray | None, fold: Fold, fold_id: int,
             seed: int, train_config: TrainConfig | None = None, naim_config: NaimConfig | None = None,
             hidden: tuple[int, ...] | None = None, knn_k: int = DEFAULT_KNN_K) -> FoldOutput:
    config = train_config or preset(experiment)
    streams = SeedStreams(seed, experiment, fold_id)
    imputation: list[ImputationReport] = []
    if experiment == "imaging":
        if embeddings is None:
            raise ValueError("imaging experiment needs embeddings")
        inputs = standardize_embeddings(embeddings, fold.train)
        model: Module = MlpModel(MlpConfig(inputs.shape[1], hidden or IMAGING_HIDDEN), rng=streams.init)
    elif experiment == "clinical-baseline":
        inputs, imputation = baseline_inputs(raw, fold, knn_k)
        for rep in imputation:
            logger.info("fold %d %s", fold_id, rep.summary())
        model = MlpModel(MlpConfig(inputs.shape[1], hidden or CLINICAL_HIDDEN), rng=streams.init)
    elif experiment == "clinical-naim":
        inputs = NaimBatch.from_dataset(encode(raw, fold.train))
        model = NaimModel(raw.schema, naim_config or NaimConfig(), rng=streams.init)
    else:
        raise ValueError(f"unknown experiment {experiment!r}")

    labels = raw.labels
    with threadpool_limits(1):
        result = train_model(model, inputs[fold.train], labels[fold.train], inputs[fold.val], labels[fold.val],
                             config, streams=streams)
        splits = {"val": fold.val, "test": fold.test}
        proba = {name: model.predict_proba(inputs[rows]) for name, rows in splits.items()}
    return FoldOutput(
        experiment, fold_id,
        ids={name: [raw.ids[i] for i in rows] for name, rows in splits.items()},
        labels={name: labels[rows].copy() for name, rows in splits.items()},
        proba=proba, result=result, imputation=imputation)


def _run_fold_job(args):
    return run_fold(*args[:6], **args[6])


def run_experiment(experiment: str, raw: RawDataset, embeddings: np.ndarray | None, plan: SplitPlan,
                   seed: int, jobs: int = 1, **kwargs) -> list[FoldOutput]:
    """Run every fold; ``jobs > 1`` farms folds out to worker processes.

    Each fold draws from its own ``(seed, experiment, fold)`` streams, so the
    outputs do not depend on ``jobs``.
    """
    tasks = [(experiment, raw, embeddings, fold, k, seed, kwargs) for k, fold in enumerate(plan)]
    if jobs <= 1:
        return [_run_fold_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_fold_job, tasks))


def write_predictions(out: FoldOutput, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["split", "patient_id", "label", "p0", "p1"])
        for split in ("val", "test"):
            for pid, y, p in zip(out.ids[split], out.labels[split], out.proba[split]):
                writer.writerow([split, pid, int(y), repr(float(p[0])), repr(float(p[1]))])


def read_predictions(path, split: str = "test") -> tuple[list[str], np.ndarray, np.ndarray]:
    ids, labels, proba = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["split"] != split:
                continue
            ids.append(row["patient_id"])
            labels.append(int(row["label"]))
            proba.append((float(row["p0"]), float(row["p1"])))
    return ids, np.array(labels, dtype=np.int64), np.array(proba, dtype=np.float64).reshape(-1, 2)


def fold_dir(root, experiment: str, fold: int) -> Path:
    return Path(root) / experiment / f"fold{fold}"
