"""Fleet-wide generalization of modeling techniques.

Pick representative models, tune each technique jointly across them under a
regression-rate constraint, decide which hyperparameters to standardize, and
record the result as versioned templates.
"""
from .bayesopt import AcquisitionSpec, fit_surrogate, initial_design
from .core import (
    Categorical,
    Configuration,
    Continuous,
    Dim,
    Fleet,
    HyperparameterSpace,
    Integer,
    ModelDescriptor,
    Technique,
    Thresholds,
    format_fraction,
    normalize_weights,
    validate_configuration,
)
from .fleet_eval import (
    CommandEvaluator,
    SyntheticFleetSpec,
    TechniqueResponseSpec,
    generate_synthetic_fleet,
    grid_oracle,
)
from .kernels import BACKEND
from .mmo import MmoConfig, MmoReport, TrialRecord, iteration_cost_summary, run_mmo, validate_holdout
from .objective import AggregateResult, aggregate_delta, performance_delta, regression_rate, weighted_mean
from .representative import select_representatives, split_holdout
from .sensitivity import ExposurePolicy, analyze_sensitivity
from .templates import TemplateRegistry, backtest, commit_version, diff_versions, instantiate_model

__version__ = "0.1.0"

__all__ = [
    "AcquisitionSpec",
    "AggregateResult",
    "BACKEND",
    "Categorical",
    "CommandEvaluator",
    "Configuration",
    "Continuous",
    "Dim",
    "ExposurePolicy",
    "Fleet",
    "HyperparameterSpace",
    "Integer",
    "MmoConfig",
    "MmoReport",
    "ModelDescriptor",
    "SyntheticFleetSpec",
    "Technique",
    "TechniqueResponseSpec",
    "TemplateRegistry",
    "Thresholds",
    "TrialRecord",
    "aggregate_delta",
    "analyze_sensitivity",
    "backtest",
    "commit_version",
    "diff_versions",
    "fit_surrogate",
    "format_fraction",
    "generate_synthetic_fleet",
    "grid_oracle",
    "initial_design",
    "instantiate_model",
    "iteration_cost_summary",
    "normalize_weights",
    "performance_delta",
    "regression_rate",
    "run_mmo",
    "select_representatives",
    "split_holdout",
    "validate_configuration",
    "validate_holdout",
    "weighted_mean",
]
