"""Synthetic clinical cohorts with a planted label model.

Each feature is driven by a standard-normal latent. Numerical features are an
affine image of it; ordinal and categorical features cut it at normal
quantiles. The label is Bernoulli with a logit that mixes the latents of the
signal features (clinical signal) with an extra latent seen only through the
imaging embeddings (complementary imaging signal).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, ndtri

from ..rng import stream
from .dataset import RawDataset
from .schema import Feature, FeatureSchema

DEFAULT_SCHEMA = FeatureSchema((
    Feature("sex", "categorical", ("F", "M")),
    Feature("age", "numerical"),
    Feature("smoking_status", "categorical", ("never", "former", "current")),
    Feature("cigarettes_per_day", "numerical"),
    Feature("family_history", "categorical", ("no", "yes")),
    Feature("pain_score", "ordinal", ("0-3", "4-6", "7-10")),
    Feature("stage", "ordinal", ("II", "IIIA", "IIIB", "IIIC")),
    Feature("histology", "categorical", ("adenocarcinoma", "squamous", "other")),
    Feature("pdl1", "numerical"),
    Feature("egfr", "categorical", ("wild-type", "mutated")),
    Feature("rt_dose", "numerical"),
    Feature("toxicity", "categorical", ("none", "esophageal", "pulmonary", "hematologic")),
))

# (center, scale) of numerical features in file units
DEFAULT_NUMERIC_SCALE = {
    "age": (65.0, 8.0),
    "cigarettes_per_day": (15.0, 8.0),
    "pdl1": (30.0, 20.0),
    "rt_dose": (50.0, 5.0),
}


@dataclass
class SignalSpec:
    """Ground-truth logistic label model.

    ``weights`` maps feature names to coefficients on their latents; the
    clinical score is rescaled to unit variance and multiplied by
    ``clinical_strength``. ``imaging_strength`` multiplies a latent carried only
    by the embeddings.
    """

    weights: dict[str, float] = field(default_factory=lambda: {
        "stage": -1.0, "pdl1": 1.0, "histology": 0.8, "rt_dose": 0.6, "smoking_status": -0.5})
    clinical_strength: float = 2.0
    imaging_strength: float = 0.8
    prevalence: float = 0.36
    embedding_dim: int = 2048
    embedding_factors: int = 8
    embedding_noise: float = 0.5


@dataclass
class SyntheticCohort:
    raw: RawDataset
    embeddings: np.ndarray
    imaging_latent: np.ndarray


def _intercept_for(score: np.ndarray, prevalence: float) -> float:
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expit(score + mid).mean() < prevalence:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _discretize(latent: np.ndarray, n_levels: int) -> np.ndarray:
    cuts = ndtri(np.arange(1, n_levels) / n_levels)
    return np.searchsorted(cuts, latent)


def synth_generate(n: int, schema: FeatureSchema = DEFAULT_SCHEMA, missing_rate: float = 0.3,
                   signal: SignalSpec | None = None, seed: int = 0, missing_mode: str = "mcar",
                   label_missing_strength: float = 1.0, missing_features: list[str] | None = None,
                   numeric_scale: dict[str, tuple[float, float]] | None = None) -> SyntheticCohort:
    """Draw ``n`` patients.

    ``missing_mode="mcar"`` hides each eligible cell independently with
    probability ``missing_rate``. ``"label"`` uses ``rate * (1 + s(1 - pi))`` for
    positives and ``rate * (1 - s pi)`` for negatives (``s`` the strength,
    ``pi`` the sample prevalence) so the expected overall rate is unchanged.
    """
    if not 0.0 <= missing_rate <= 1.0:
        raise ValueError(f"missing_rate must lie in [0, 1], got {missing_rate}")
    if missing_mode not in ("mcar", "label"):
        raise ValueError(f"unknown missing_mode {missing_mode!r}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    signal = signal or SignalSpec()
    scales = {**DEFAULT_NUMERIC_SCALE, **(numeric_scale or {})}
    unknown = set(signal.weights) - set(schema.names)
    if unknown:
        raise ValueError(f"signal weights name unknown features: {sorted(unknown)}")

    latent = stream(seed, "synth", "features").standard_normal((n, len(schema)))
    values = np.empty((n, len(schema)), dtype=object)
    for j, feat in enumerate(schema):
        if feat.kind == "numerical":
            center, scale = scales.get(feat.name, (0.0, 1.0))
            values[:, j] = [round(float(center + scale * z), 4) for z in latent[:, j]]
        else:
            codes = _discretize(latent[:, j], len(feat.categories))
            values[:, j] = [feat.categories[c] for c in codes]

    w = np.array([signal.weights.get(name, 0.0) for name in schema.names])
    score = latent @ w
    if np.any(w):
        score = score / np.sqrt((w**2).sum())
    img_rng = stream(seed, "synth", "imaging")
    imaging_latent = img_rng.standard_normal(n)
    logit = signal.clinical_strength * score + signal.imaging_strength * imaging_latent
    logit = logit + _intercept_for(logit, signal.prevalence)
    labels = (stream(seed, "synth", "labels").random(n) < expit(logit)).astype(np.int64)

    factors = np.column_stack([imaging_latent, img_rng.standard_normal((n, signal.embedding_factors - 1))])
    mixing = img_rng.standard_normal((signal.embedding_factors, signal.embedding_dim))
    mixing /= np.sqrt(signal.embedding_factors)
    embeddings = factors @ mixing + signal.embedding_noise * img_rng.standard_normal((n, signal.embedding_dim))

    eligible = np.ones(len(schema), dtype=bool)
    if missing_features is not None:
        eligible = np.array([name in missing_features for name in schema.names])
    if missing_mode == "mcar":
        p_row = np.full(n, missing_rate)
    else:
        prev = labels.mean()
        s = label_missing_strength
        p_row = np.where(labels == 1, missing_rate * (1 + s * (1 - prev)), missing_rate * (1 - s * prev))
        p_row = np.clip(p_row, 0.0, 1.0)
    draws = stream(seed, "synth", "missing").random((n, len(schema)))
    hidden = (draws < p_row[:, None]) & eligible[None, :]
    observed = ~hidden
    values[hidden] = None

    ids = [f"P{i + 1:04d}" for i in range(n)]
    raw = RawDataset(schema, ids, values, observed, labels)
    return SyntheticCohort(raw, embeddings, imaging_latent)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_cohort(cohort: SyntheticCohort, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"schema": out / "schema.csv", "data": out / "data.csv", "embeddings": out / "embeddings.csv"}
    raw = cohort.raw
    raw.schema.save(paths["schema"])
    with open(paths["data"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", *raw.schema.names, "label"])
        for i, pid in enumerate(raw.ids):
            writer.writerow([pid, *(_fmt(v) for v in raw.values[i]), int(raw.labels[i])])
    with open(paths["embeddings"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", *(f"e{k}" for k in range(cohort.embeddings.shape[1]))])
        for pid, row in zip(raw.ids, cohort.embeddings):
            writer.writerow([pid, *(f"{x:.6f}" for x in row)])
    return paths
