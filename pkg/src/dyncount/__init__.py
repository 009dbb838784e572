"""Dynamic count-data regression with time-varying coefficients.

Counts are modelled through one or two log/logit-linked linear predictors
whose coefficients evolve over time as integrated random walks; batches of
observations update the coefficient state through a Kalman-style recursion
with Laplace-approximated filtering steps.  Smoothing parameters are chosen
by maximizing the one-observation-ahead predictive likelihood, and fitted
models persist as snapshots that can be updated online as new data arrives.
"""

from .config import (
    ModelConfig,
    StateLayout,
    batch_midpoint,
    build_design_matrix,
    build_design_row,
    process_noise,
    state_dimension,
    state_layout,
    transition_matrix,
)
from .dataio import (
    BatchDataset,
    DatasetSchema,
    from_arrays,
    load_dataset,
    load_snapshot,
    save_dataset,
    save_snapshot,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DyncountError,
    MetricError,
    NumericError,
    NumericWarning,
    SelectionError,
    SequencingError,
    SnapshotFormatError,
)
from .evaluation import (
    MetricReport,
    count_diff_table,
    double_lift_data,
    gini_index,
    lift_plot_data,
    lifts,
    metric_report,
    poisson_deviance,
)
from .families import (
    FamilyEval,
    Gaussian,
    NegativeBinomial,
    ObservationFamily,
    Poisson,
    ZeroInflatedPoisson,
    family_for_config,
    grad_hess,
    loglik,
    mean,
    pmf,
    resolve_family,
)
from .filtering import (
    FilterTrace,
    GaussianState,
    ModelSnapshot,
    TraceSummary,
    batch_predictive_loglik,
    filter_step,
    fit,
    init_state,
    predict_step,
    update,
)
from .prediction import (
    CoefficientBandSeries,
    OneStepResult,
    PredictionResult,
    coefficient_bands,
    k_step_state,
    one_step_predictions,
    predict_counts,
    predict_mean_counts,
    predict_pmf,
)
from .simulate import SimSpec, generate, model_config_for, true_mean_intensity
from .smoothing import (
    SmoothingSearchConfig,
    SmoothingSelection,
    predictive_loglik,
    refresh_smoothing,
    select_smoothing,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
