"""Performance-estimation layer: reindex, time features, boosted-tree models
and prediction scoring."""

from .features import (
    TIME_FEATURE_NAMES, DynamicReindexMap, TimeFeatures,
    compute_dynamic_reindex, extract_time_features,
)
from .gbdt import (
    EnsembleModel, RegressorConfig, SearchRanges, encode_cell,
    fit_accuracy_default, fit_regressor,
)
from .scoring import PredictionRecord, score_predictions

__all__ = [
    "TIME_FEATURE_NAMES", "DynamicReindexMap", "TimeFeatures",
    "compute_dynamic_reindex", "extract_time_features", "EnsembleModel",
    "RegressorConfig", "SearchRanges", "encode_cell", "fit_accuracy_default",
    "fit_regressor", "PredictionRecord", "score_predictions",
]
