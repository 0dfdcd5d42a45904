"""Shrinkage fusion of a small target-population logistic fit with a big, biased one."""

from .errors import (
    DataError,
    DegenerateStatistic,
    DimensionMismatch,
    EmptyAfterFiltering,
    FoldTooSmall,
    FusionError,
    InvalidConfig,
    InvalidDimension,
    MissingBaseline,
    MissingColumn,
    NonBinaryResponse,
    NonPositiveDefinite,
    NotConverged,
    NumericalError,
    RankDeficient,
    Separation,
    UsageError,
)
from .fusion import METHODS, EstimateReport, FusionConfig, pooled_fit, run_all_estimators
from .glm import Dataset, FitOptions, LogisticFit, Source, deviance, fit_logistic, information_matrix, log_likelihood
from .io import ColumnSpec, SimulationPlan, emit_report, ingest_csv, load_plan, read_report
from .penalized import (
    CVResult,
    PenalizedFit,
    PenaltyKind,
    PenaltySpec,
    PenaltyTarget,
    cross_validate_lambda,
    equivalent_weight,
    fit_penalized,
)
from .sim import BiasMechanism, ScenarioConfig, SimulationResult, aggregate_log_ratios, generate_scenario_data, run_grid
from .svg import emit_figure_grid
from .weights import (
    ExpansionMoments,
    FusionInput,
    SourceMoments,
    WeightKind,
    WeightMatrix,
    apply_weight,
    compute_js,
    compute_w2,
    compute_w_lambda,
    compute_wh,
    estimate_moments,
    estimate_moments_bootstrap,
    js_constant,
)

__version__ = "0.1.0"
