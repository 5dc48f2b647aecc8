"""Causal feature learning of wind and sea-surface-temperature macro-variables."""

__version__ = "0.1.0"

from .analysis import (
    PrecisionReport,
    baseline_precision,
    k_sweep,
    minimal_manipulation,
    precision,
    reshuffle_test,
    subset_chain,
)
from .cfl import (
    ConditionalTable,
    KnnRepresentation,
    MacroAssignment,
    cfl_pipeline,
    conditional_table,
    knn_representation,
    merge_effective_states,
)
from .clustering import adjusted_rand_index, assign, kmeans
from .grid import (
    NINO34,
    PACIFIC_BAND,
    FieldSeries,
    PairedDataset,
    RegionSpec,
    anomaly_series,
    climatology,
    extract_region,
    flatten_pairs,
    load_grid_series,
    nino34_anomaly,
    running_weekly_average,
)
from .regression import Regressor, RegressorConfig, fit_regressor, gradient_check
from .synthetic import SyntheticEnsoConfig, ToyConfig, enso_like_generate, toy_generate

__all__ = [
    "ConditionalTable", "FieldSeries", "KnnRepresentation", "MacroAssignment", "NINO34", "PACIFIC_BAND",
    "PairedDataset", "PrecisionReport", "RegionSpec", "Regressor", "RegressorConfig", "SyntheticEnsoConfig",
    "ToyConfig", "adjusted_rand_index", "anomaly_series", "assign", "baseline_precision", "cfl_pipeline",
    "climatology", "conditional_table", "enso_like_generate", "extract_region", "fit_regressor",
    "flatten_pairs", "gradient_check", "k_sweep", "kmeans", "knn_representation", "load_grid_series",
    "merge_effective_states", "minimal_manipulation", "nino34_anomaly", "precision", "reshuffle_test",
    "running_weekly_average", "subset_chain", "toy_generate",
]
