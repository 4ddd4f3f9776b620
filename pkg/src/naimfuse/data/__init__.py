from .dataset import (Column, DataLoadError, RawDataset, TabularDataset, encode, fit_normalization,
                      load_csv, load_embeddings)
from .impute import ImputationReport, knn_impute, most_frequent_impute
from .schema import Feature, FeatureSchema, SchemaError
from .split import Fold, SplitError, SplitPlan, stratified_kfold_split
from .synth import DEFAULT_SCHEMA, SignalSpec, SyntheticCohort, synth_generate, write_cohort

__all__ = [
    "Column", "DEFAULT_SCHEMA", "DataLoadError", "Feature", "FeatureSchema", "Fold", "ImputationReport",
    "RawDataset", "SchemaError", "SignalSpec", "SplitError", "SplitPlan", "SyntheticCohort",
    "TabularDataset", "encode", "fit_normalization", "knn_impute", "load_csv", "load_embeddings",
    "most_frequent_impute", "stratified_kfold_split", "synth_generate", "write_cohort",
]
