"""Automatic construction of NARX surrogate model chains.

The package models the response of a driven dynamical system with a chain
of sparse polynomial NARX models operating on PCA-compressed sliding
windows of the available signals. Chains are built automatically: features
are ranked against the forecast residual, and intermediate quantities get
their own models, recursively, whenever their features carry the most
information.
"""

from .errors import (
    CalibrationError,
    ConfigError,
    DataError,
    ForecastDivergence,
    NumericalError,
)
from .signals import (
    Dataset,
    QuantityRole,
    Realization,
    TransformSpec,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .window_features import (
    FeatureColumn,
    FeatureExtractor,
    FeatureMatrix,
    WindowAlignment,
    WindowSpec,
    assemble_feature_matrix,
    assemble_from_series,
    fit_pca,
    transform,
)
from .poly_basis import MultiIndexSet, evaluate_basis, generate_hyperbolic_set
from .fnarx_model import (
    ErrorMetrics,
    FitConfig,
    FnarxModel,
    ForecastData,
    compute_metrics,
    fit,
    forecast,
    forecast_batch,
    load_model,
    mean_error,
    predict_one_step,
    rmse,
    save_model,
    trace_error,
)
from .mnarx_auto import (
    AlgoTrace,
    Assessment,
    ConstructionResult,
    ModelSequence,
    RankingConfig,
    apply_transform,
    construct,
    kendall_tau,
    load_sequence,
    predict,
    rank_features,
    save_sequence,
)
from .boucwen_bench import (
    BoucWenParams,
    GroundMotionParams,
    IntegratorConfig,
    arias_intensity,
    calibrate_envelope,
    generate_benchmark,
    resample_linear,
    significant_duration,
    simulate_boucwen,
    simulate_ground_motion,
)
from .reporting import EvaluationReport, evaluate_sequence, export_report

__version__ = "0.1.0"

__all__ = [
    "AlgoTrace",
    "Assessment",
    "BoucWenParams",
    "CalibrationError",
    "ConfigError",
    "ConstructionResult",
    "DataError",
    "Dataset",
    "ErrorMetrics",
    "EvaluationReport",
    "FeatureColumn",
    "FeatureExtractor",
    "FeatureMatrix",
    "FitConfig",
    "FnarxModel",
    "ForecastData",
    "ForecastDivergence",
    "GroundMotionParams",
    "IntegratorConfig",
    "ModelSequence",
    "MultiIndexSet",
    "NumericalError",
    "QuantityRole",
    "RankingConfig",
    "Realization",
    "TransformSpec",
    "WindowAlignment",
    "WindowSpec",
    "apply_transform",
    "arias_intensity",
    "assemble_feature_matrix",
    "assemble_from_series",
    "calibrate_envelope",
    "compute_metrics",
    "construct",
    "evaluate_basis",
    "evaluate_sequence",
    "export_report",
    "fit",
    "fit_pca",
    "forecast",
    "forecast_batch",
    "generate_benchmark",
    "generate_hyperbolic_set",
    "kendall_tau",
    "load_dataset",
    "load_model",
    "load_sequence",
    "mean_error",
    "predict",
    "predict_one_step",
    "rank_features",
    "resample_linear",
    "rmse",
    "save_dataset",
    "significant_duration",
    "save_model",
    "save_sequence",
    "simulate_boucwen",
    "simulate_ground_motion",
    "split_dataset",
    "trace_error",
    "transform",
]
