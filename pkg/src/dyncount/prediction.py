"""State forecasting, intensity prediction, and coefficient band series.

Forecasting propagates the filtered state without data; intensity
prediction is plug-in (the family mean map applied at the predicted
coefficient expectations).  The one-step-ahead mode advances the filter
through new batches, predicting each batch's rows before conditioning on
them; this is the prequential path model validation uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .config import (
    ModelConfig,
    batch_midpoint,
    build_design_matrix,
    process_noise,
    state_layout,
    transition_matrix,
)
from .errors import ConfigError
from .families import ObservationFamily, family_for_config
from .filtering import (
    FilterTrace,
    GaussianState,
    ModelSnapshot,
    TraceSummary,
    design_for_dataset,
    predict_step,
    update,
)


@dataclass(frozen=True)
class PredictionResult:
    """K-step-ahead predictions for a set of covariate rows."""

    horizon: int
    state: GaussianState
    means: np.ndarray
    pmf: np.ndarray        # shape (n_rows, k_max + 1)


@dataclass(frozen=True)
class CoefficientBand:
    name: str
    kind: str              # "varying" | "constant"
    timepoints: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    phase: tuple[str, ...]  # "filtered" | "forecast" per grid point


@dataclass(frozen=True)
class CoefficientBandSeries:
    level: float
    coefficients: tuple[CoefficientBand, ...]


def k_step_state(state: GaussianState, K: int, config: ModelConfig) -> GaussianState:
    """Propagate a state K batch intervals ahead without filtering."""
    if K < 1:
        raise ValueError("prediction horizon K must be at least 1")
    transition = transition_matrix(config)
    noise = process_noise(config)
    for _ in range(K):
        state = predict_step(
            state, transition, noise, batch_midpoint(state.batch_index + 1, config.S)
        )
    return state


def _design_rows(rows, config: ModelConfig, rows_zero=None):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if config.family != "zip":
        return build_design_matrix(rows, config)
    rz = None if rows_zero is None else np.atleast_2d(np.asarray(rows_zero, dtype=float))
    return build_design_matrix(rows, config, rz)


def _etas(design, mean_vector):
    if isinstance(design, tuple):
        U, V = design
        return np.column_stack([U @ mean_vector, V @ mean_vector])
    return design @ mean_vector


def predict_mean_counts(
    state: GaussianState,
    rows,
    family: ObservationFamily,
    config: ModelConfig,
    rows_zero=None,
) -> np.ndarray:
    """Plug-in predicted mean count per covariate row at the state's timepoint."""
    design = _design_rows(rows, config, rows_zero)
    return np.asarray(family.mean(_etas(design, state.mean)), dtype=float)


def predict_pmf(
    state: GaussianState,
    rows,
    family: ObservationFamily,
    config: ModelConfig,
    k_max: int,
    rows_zero=None,
) -> np.ndarray:
    """Plug-in pmf values for counts 0..k_max, one row per covariate row."""
    design = _design_rows(rows, config, rows_zero)
    eta = _etas(design, state.mean)
    return pmf_matrix(family, eta, k_max)


def pmf_matrix(family: ObservationFamily, eta, k_max: int) -> np.ndarray:
    """Stack family pmf values over k = 0..k_max for given predictors."""
    eta = np.asarray(eta, dtype=float)
    n = eta.shape[0]
    out = np.empty((n, k_max + 1))
    for k in range(k_max + 1):
        out[:, k] = family.pmf(np.full(n, float(k)), eta)
    return out


def predict_counts(
    snapshot: ModelSnapshot,
    rows,
    K: int,
    k_max: int = 10,
    family: ObservationFamily | None = None,
    rows_zero=None,
) -> PredictionResult:
    """Forecast the state K steps ahead and predict the given rows there."""
    config = snapshot.config
    if family is None:
        family = family_for_config(config)
    state = k_step_state(snapshot.state, K, config)
    design = _design_rows(rows, config, rows_zero)
    eta = _etas(design, state.mean)
    means = np.asarray(family.mean(eta), dtype=float)
    pmf = pmf_matrix(family, eta, k_max) if family.is_count else np.zeros((means.size, 0))
    return PredictionResult(horizon=K, state=state, means=means, pmf=pmf)


@dataclass(frozen=True)
class OneStepResult:
    """Per-row one-step-ahead predictions plus the advanced snapshot."""

    means: np.ndarray
    eta: np.ndarray
    snapshot: ModelSnapshot


def one_step_predictions(
    snapshot: ModelSnapshot,
    new_data,
    family: ObservationFamily | None = None,
) -> OneStepResult:
    """Predict each new batch's rows before filtering that batch in.

    Every row's predictor is evaluated at the state predicted for its batch
    midpoint using only earlier data, so the resulting means are genuinely
    out-of-sample; the advanced snapshot (with all new batches filtered in)
    is returned alongside.
    """
    config = snapshot.config
    if family is None:
        family = family_for_config(config)
    advanced = update(snapshot, new_data, family=family)
    trace = advanced.trace
    predicted_by_batch = {
        int(s): trace.predicted_mean[i]
        for i, s in enumerate(trace.batch_index)
    }
    design = design_for_dataset(new_data, config)
    two = isinstance(design, tuple)
    n = new_data.n
    eta = np.zeros((n, 2)) if two else np.zeros(n)
    for s in np.unique(new_data.batch_of):
        sl = new_data.rows_in_batch(int(s))
        mean_vec = predicted_by_batch[int(s)]
        if two:
            eta[sl, 0] = design[0][sl] @ mean_vec
            eta[sl, 1] = design[1][sl] @ mean_vec
        else:
            eta[sl] = design[sl] @ mean_vec
    means = np.asarray(family.mean(eta), dtype=float)
    return OneStepResult(means=means, eta=eta, snapshot=advanced)


def _trace_arrays(trace):
    if isinstance(trace, FilterTrace):
        trace = trace.summary()
    if not isinstance(trace, TraceSummary):
        raise ConfigError("expected a FilterTrace or TraceSummary")
    return trace


def coefficient_bands(
    trace,
    forecast_states=(),
    level: float = 0.95,
    config: ModelConfig | None = None,
    use: str = "filtered",
) -> CoefficientBandSeries:
    """Pointwise Gaussian band series for every coefficient.

    The trace supplies the in-sample span (filtered by default, or the
    one-step-ahead predicted states with ``use="predicted"``); optional
    forecast states extend the grid beyond the data.  Duplicate timepoints
    (from mid-interval continuations) keep their latest entry so the grid
    stays strictly increasing.
    """
    if not (0.0 < level < 1.0):
        raise ValueError("band level must lie strictly between 0 and 1")
    if config is None:
        raise ConfigError("coefficient_bands requires the model configuration")
    summary = _trace_arrays(trace)
    z = norm.ppf(0.5 * (1.0 + level))
    if use == "filtered":
        means, variances = summary.filtered_mean, summary.filtered_var
    elif use == "predicted":
        means, variances = summary.predicted_mean, summary.predicted_var
    else:
        raise ConfigError("use must be 'filtered' or 'predicted'")
    times = list(summary.timepoint)
    mean_rows = [means[i] for i in range(len(summary))]
    var_rows = [variances[i] for i in range(len(summary))]
    phases = ["filtered"] * len(times)
    for state in forecast_states:
        times.append(state.timepoint)
        mean_rows.append(state.mean)
        var_rows.append(np.diag(state.cov))
        phases.append("forecast")
    keep: dict[float, int] = {}
    for i, tp in enumerate(times):
        keep[float(tp)] = i
    idx = sorted(keep.values(), key=lambda i: times[i])
    times_arr = np.asarray([times[i] for i in idx])
    mean_arr = np.asarray([mean_rows[i] for i in idx])
    var_arr = np.asarray([var_rows[i] for i in idx])
    phase_seq = tuple(phases[i] for i in idx)
    layout = state_layout(config)
    bands = []
    for entry in layout.entries:
        slot = entry.value_slot
        mu = mean_arr[:, slot]
        sd = np.sqrt(np.maximum(var_arr[:, slot], 0.0))
        bands.append(
            CoefficientBand(
                name=entry.name,
                kind=entry.kind,
                timepoints=times_arr,
                mean=mu,
                lower=mu - z * sd,
                upper=mu + z * sd,
                phase=phase_seq,
            )
        )
    return CoefficientBandSeries(level=level, coefficients=tuple(bands))
