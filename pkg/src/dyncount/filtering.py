"""Batch Kalman recursion with Laplace-approximated filtering updates.

The latent coefficient state evolves linearly between batch midpoints; each
batch's observations enter through a Newton-Raphson search for the posterior
mode, with the curvature at the mode supplying the posterior covariance.
The per-observation predictive log-likelihood used for smoothing-parameter
selection is computed here as well, reduced to predictor space: for one
observation the d-dimensional Laplace integral collapses to a one- or
two-dimensional fixed point in the linear predictor(s), with the Gaussian
normalization constants cancelling exactly.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .config import (
    ModelConfig,
    batch_midpoint,
    build_design_matrix,
    process_noise,
    state_dimension,
    transition_matrix,
)
from .errors import ConfigError, ConvergenceError, NumericError, SequencingError
from .families import ObservationFamily, family_for_config

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class GaussianState:
    """Gaussian belief over the coefficient state at one batch midpoint.

    The covariance is kept symmetric; arrays are treated as immutable.
    """

    mean: np.ndarray
    cov: np.ndarray
    batch_index: int = 0
    timepoint: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


@dataclass(frozen=True)
class BatchRecord:
    batch_index: int
    timepoint: float
    n_obs: int
    predicted: GaussianState
    filtered: GaussianState
    newton_iterations: int
    predictive_loglik: float


@dataclass(frozen=True)
class FilterTrace:
    """Per-batch record of the recursion, in processing order."""

    records: tuple[BatchRecord, ...]

    def __len__(self):
        return len(self.records)

    def summary(self) -> "TraceSummary":
        recs = self.records
        d = recs[0].predicted.mean.size if recs else 0
        return TraceSummary(
            batch_index=np.array([r.batch_index for r in recs], dtype=int),
            timepoint=np.array([r.timepoint for r in recs]),
            n_obs=np.array([r.n_obs for r in recs], dtype=int),
            newton_iterations=np.array([r.newton_iterations for r in recs], dtype=int),
            predictive_loglik=np.array([r.predictive_loglik for r in recs]),
            predicted_mean=np.array([r.predicted.mean for r in recs]).reshape(len(recs), d),
            predicted_var=np.array([np.diag(r.predicted.cov) for r in recs]).reshape(len(recs), d),
            filtered_mean=np.array([r.filtered.mean for r in recs]).reshape(len(recs), d),
            filtered_var=np.array([np.diag(r.filtered.cov) for r in recs]).reshape(len(recs), d),
        )


@dataclass(frozen=True)
class TraceSummary:
    """Compact per-batch history kept inside snapshots.

    Stores means and covariance diagonals only; enough for coefficient band
    plots and fit reports without persisting full covariance matrices.
    """

    batch_index: np.ndarray
    timepoint: np.ndarray
    n_obs: np.ndarray
    newton_iterations: np.ndarray
    predictive_loglik: np.ndarray
    predicted_mean: np.ndarray
    predicted_var: np.ndarray
    filtered_mean: np.ndarray
    filtered_var: np.ndarray

    def __len__(self):
        return len(self.batch_index)

    @staticmethod
    def concat(a: "TraceSummary", b: "TraceSummary") -> "TraceSummary":
        if len(a) == 0:
            return b
        if len(b) == 0:
            return a
        return TraceSummary(
            **{
                name: np.concatenate([getattr(a, name), getattr(b, name)])
                for name in (
                    "batch_index",
                    "timepoint",
                    "n_obs",
                    "newton_iterations",
                    "predictive_loglik",
                )
            },
            **{
                name: np.vstack([getattr(a, name), getattr(b, name)])
                for name in ("predicted_mean", "predicted_var", "filtered_mean", "filtered_var")
            },
        )


def _empty_summary(d: int) -> TraceSummary:
    return TraceSummary(
        batch_index=np.zeros(0, dtype=int),
        timepoint=np.zeros(0),
        n_obs=np.zeros(0, dtype=int),
        newton_iterations=np.zeros(0, dtype=int),
        predictive_loglik=np.zeros(0),
        predicted_mean=np.zeros((0, d)),
        predicted_var=np.zeros((0, d)),
        filtered_mean=np.zeros((0, d)),
        filtered_var=np.zeros((0, d)),
    )


@dataclass(frozen=True)
class ModelSnapshot:
    """Persistable model state: the unit of the online update workflow."""

    config: ModelConfig
    state: GaussianState
    trace: TraceSummary
    created: str
    version: int = SNAPSHOT_VERSION
    #: full per-batch states from a fresh fit; not persisted
    full_trace: FilterTrace | None = field(default=None, compare=False)

    @property
    def batch_index(self) -> int:
        return self.state.batch_index


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _spd_factor(matrix: np.ndarray, jitter: float = 1e-8):
    """Cholesky factor with a single jitter retry; raises NumericError after."""
    try:
        return cho_factor(matrix, lower=True)
    except LinAlgError:
        pass
    try:
        return cho_factor(matrix + jitter * np.eye(matrix.shape[0]), lower=True)
    except LinAlgError as exc:
        raise NumericError("curvature matrix is not positive definite") from exc


def _solve_direction(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve against a nominally-PSD matrix, escalating jitter if needed.

    Intermediate Newton iterates of non-concave likelihoods (zip) can have
    indefinite curvature; the ridge keeps the step usable and step-halving
    rejects bad directions.
    """
    jitter = 0.0
    eye = np.eye(matrix.shape[0])
    for _ in range(8):
        try:
            return cho_solve(cho_factor(matrix + jitter * eye, lower=True), rhs)
        except LinAlgError:
            jitter = 1e-8 if jitter == 0.0 else jitter * 100.0
    raise NumericError("could not factor the Newton curvature matrix")


def init_state(config: ModelConfig) -> GaussianState:
    """Diffuse initial belief N(0, c*I) before any data (batch index 0)."""
    d = state_dimension(config)
    return GaussianState(
        mean=np.zeros(d),
        cov=config.prior_scale * np.eye(d),
        batch_index=0,
        timepoint=-0.5 / config.S,
    )


def predict_step(
    state: GaussianState,
    transition: np.ndarray,
    noise: np.ndarray,
    timepoint: float | None = None,
) -> GaussianState:
    """Propagate the belief one batch interval forward."""
    if transition.shape[0] != state.mean.size:
        raise NumericError("transition matrix does not match the state dimension")
    mean = transition @ state.mean
    cov = _symmetrize(transition @ state.cov @ transition.T + noise)
    if timepoint is None:
        timepoint = state.timepoint
    return GaussianState(mean, cov, state.batch_index + 1, timepoint)


def _eta(design, gamma: np.ndarray):
    if isinstance(design, tuple):
        U, V = design
        return np.column_stack([U @ gamma, V @ gamma])
    return design @ gamma


def _obs_grad_curvature(design, d1, d2):
    """Observation contributions: score vector and negated Hessian (A = -sum H_i)."""
    if isinstance(design, tuple):
        U, V = design
        grad = U.T @ d1[:, 0] + V.T @ d1[:, 1]
        A = -(
            (U * d2[:, 0][:, None]).T @ U
            + (V * d2[:, 1][:, None]).T @ V
            + (U * d2[:, 2][:, None]).T @ V
            + (V * d2[:, 2][:, None]).T @ U
        )
        return grad, _symmetrize(A)
    grad = design.T @ d1
    A = (design * (-d2)[:, None]).T @ design
    return grad, _symmetrize(A)


def filter_step(
    state: GaussianState,
    y,
    design,
    family: ObservationFamily,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> tuple[GaussianState, int]:
    """Condition a predicted state on one batch of observations.

    ``design`` holds the batch's state-space design rows: an (n, d) matrix,
    or a pair of such matrices for two-predictor families.  Returns the
    filtered state (posterior mode and inverse negative curvature) and the
    Newton iteration count.  An empty batch returns the input unchanged.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return state, 0
    m0 = state.mean
    prior_chol = _spd_factor(state.cov)
    prior_precision = _symmetrize(cho_solve(prior_chol, np.eye(m0.size)))

    def objective(gamma):
        ll = float(np.sum(family.loglik(y, _eta(design, gamma))))
        diff = gamma - m0
        return ll - 0.5 * float(diff @ cho_solve(prior_chol, diff))

    def derivatives(gamma):
        d1, d2 = family.predictor_derivs(y, _eta(design, gamma))
        grad_obs, A = _obs_grad_curvature(design, d1, d2)
        grad = grad_obs - cho_solve(prior_chol, gamma - m0)
        return grad, prior_precision + A

    gamma = m0.copy()
    phi = objective(gamma)
    grad, curvature = derivatives(gamma)
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        step = _solve_direction(curvature, grad)
        if np.all(np.abs(step) < tol * (1.0 + np.abs(gamma))):
            gamma = gamma + step
            converged = True
            break
        alpha = 1.0
        accepted = False
        for _ in range(21):
            candidate = gamma + alpha * step
            phi_new = objective(candidate)
            if phi_new > phi:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # objective plateau: accept as converged only if the score vanished
            if np.linalg.norm(grad) <= 1e-6 * (1.0 + abs(phi)):
                converged = True
                break
            raise ConvergenceError(
                "Newton iteration stalled without increasing the posterior density",
                state=GaussianState(gamma, state.cov, state.batch_index, state.timepoint),
            )
        moved = alpha * step
        gamma = candidate
        phi = phi_new
        grad, curvature = derivatives(gamma)
        if np.all(np.abs(moved) < tol * (1.0 + np.abs(gamma))):
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"Newton did not converge within {max_iter} iterations",
            state=GaussianState(gamma, state.cov, state.batch_index, state.timepoint),
        )
    grad, curvature = derivatives(gamma)
    cov = _symmetrize(cho_solve(_spd_factor(curvature), np.eye(m0.size)))
    filtered = GaussianState(gamma, cov, state.batch_index, state.timepoint)
    return filtered, iterations


def _quadratic_forms_single(design: np.ndarray, cov: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk,ik->i", design, cov, design)


def batch_predictive_loglik(
    state: GaussianState,
    y,
    design,
    family: ObservationFamily,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> float:
    """Sum of Laplace-approximated log p(y_i | history) over one batch.

    Each observation is integrated against the batch's predicted state; the
    per-observation posterior-mode search reduces to a fixed point in the
    linear predictor(s) because the mode shift lies in the span of the
    design row(s).  Returns -inf when any per-observation Newton search
    fails or when the curvature at a mode is not negative definite.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 0.0
    if isinstance(design, tuple):
        return _predictive_two(state, y, design, family, max_iter, tol)
    return _predictive_single(state, y, design, family, max_iter, tol)


def _predictive_single(state, y, design, family, max_iter, tol) -> float:
    mu0 = design @ state.mean
    v0 = _quadratic_forms_single(design, state.cov)
    eta = mu0.copy()
    converged = np.zeros(y.shape, dtype=bool)
    for _ in range(max_iter):
        d1, d2 = family.predictor_derivs(y, eta)
        residual = eta - mu0 - v0 * d1
        slope = 1.0 - v0 * d2
        if np.any(slope <= 0):
            return -np.inf
        step = residual / slope
        eta = eta - step
        converged = np.abs(step) <= tol * (1.0 + np.abs(eta))
        if np.all(converged):
            break
    if not np.all(converged):
        return -np.inf
    d1, d2 = family.predictor_derivs(y, eta)
    det_term = 1.0 - d2 * v0
    if np.any(det_term <= 0):
        return -np.inf
    values = family.loglik(y, eta) - 0.5 * d1 ** 2 * v0 - 0.5 * np.log(det_term)
    total = float(np.sum(values))
    return total if np.isfinite(total) else -np.inf


def _predictive_two(state, y, design, family, max_iter, tol) -> float:
    """Two-predictor reduction, solved by damped Newton per observation.

    The zero-inflated likelihood is not concave in its predictors, so the
    mode search maximizes the reduced objective
    h(eta) = loglik(eta) - 0.5 (eta - mu)' Sigma^-1 (eta - mu)
    with a ridge forcing the 2x2 curvature positive definite and per-row
    backtracking on h.
    """
    U, V = design
    cov = state.cov
    mu = np.column_stack([U @ state.mean, V @ state.mean])
    s_uu = _quadratic_forms_single(U, cov)
    s_vv = _quadratic_forms_single(V, cov)
    s_uv = np.einsum("ij,jk,ik->i", U, cov, V)
    det_s = s_uu * s_vv - s_uv ** 2
    if np.any(det_s <= 0):
        return -np.inf
    # closed-form 2x2 prior precision per observation
    p11 = s_vv / det_s
    p22 = s_uu / det_s
    p12 = -s_uv / det_s

    def h_value(eta):
        du = eta[:, 0] - mu[:, 0]
        dv = eta[:, 1] - mu[:, 1]
        quad = p11 * du ** 2 + 2.0 * p12 * du * dv + p22 * dv ** 2
        return family.loglik(y, eta) - 0.5 * quad

    eta = mu.copy()
    h = h_value(eta)
    active = np.ones(len(y), dtype=bool)
    for _ in range(max_iter):
        d1, d2 = family.predictor_derivs(y, eta)
        du = eta[:, 0] - mu[:, 0]
        dv = eta[:, 1] - mu[:, 1]
        g_u = d1[:, 0] - (p11 * du + p12 * dv)
        g_v = d1[:, 1] - (p12 * du + p22 * dv)
        m11 = p11 - d2[:, 0]
        m22 = p22 - d2[:, 1]
        m12 = p12 - d2[:, 2]
        # ridge the 2x2 curvature onto the PD cone where needed
        half_gap = 0.5 * np.sqrt((m11 - m22) ** 2 + 4.0 * m12 ** 2)
        min_eig = 0.5 * (m11 + m22) - half_gap
        ridge = np.where(min_eig < 1e-10, 1e-10 - min_eig, 0.0)
        m11 = m11 + ridge
        m22 = m22 + ridge
        det_m = m11 * m22 - m12 ** 2
        step_u = (m22 * g_u - m12 * g_v) / det_m
        step_v = (-m12 * g_u + m11 * g_v) / det_m
        small = np.maximum(np.abs(step_u), np.abs(step_v)) <= tol * (
            1.0 + np.abs(eta).max(axis=1)
        )
        alpha = np.where(active, 1.0, 0.0)
        candidate = eta.copy()
        h_new = h.copy()
        for _ in range(30):
            candidate[:, 0] = eta[:, 0] + alpha * step_u
            candidate[:, 1] = eta[:, 1] + alpha * step_v
            h_new = h_value(candidate)
            bad = active & (h_new < h - 1e-12 * (1.0 + np.abs(h)))
            if not np.any(bad):
                break
            alpha = np.where(bad, 0.5 * alpha, alpha)
        eta = candidate
        h = np.maximum(h, h_new)
        active = active & ~small
        if not np.any(active):
            break
    if np.any(active):
        return -np.inf
    d1, d2 = family.predictor_derivs(y, eta)
    du = eta[:, 0] - mu[:, 0]
    dv = eta[:, 1] - mu[:, 1]
    quad = p11 * du ** 2 + 2.0 * p12 * du * dv + p22 * dv ** 2
    m11 = p11 - d2[:, 0]
    m22 = p22 - d2[:, 1]
    m12 = p12 - d2[:, 2]
    det_m = m11 * m22 - m12 ** 2
    if np.any(det_m <= 0) or np.any(m11 <= 0):
        return -np.inf
    # det(-D2 l) relative to the prior: det(M) * det(Sigma)
    values = family.loglik(y, eta) - 0.5 * quad - 0.5 * np.log(det_m * det_s)
    total = float(np.sum(values))
    return total if np.isfinite(total) else -np.inf


def design_for_dataset(dataset, config: ModelConfig):
    """Expand a dataset's covariates into design rows in configuration order.

    When the configuration declares covariate names they are looked up in
    the dataset columns; otherwise the dataset columns are assumed to be
    ordered varying-first.
    """

    def pick(names):
        idx = []
        for name in names:
            if name not in dataset.columns:
                raise ConfigError(f"declared covariate {name!r} not found in dataset columns")
            idx.append(dataset.columns.index(name))
        return dataset.x[:, idx]

    if config.varying or config.constant:
        X = np.column_stack([pick(config.varying), pick(config.constant)]) if (
            config.q1 + config.q2
        ) else np.zeros((dataset.n, 0))
    else:
        X = dataset.x
        if X.shape[1] != config.q1 + config.q2:
            raise ConfigError(
                f"dataset has {X.shape[1]} covariates, configuration expects {config.q1 + config.q2}"
            )
    if config.family != "zip":
        return build_design_matrix(X, config)
    if config.zero_varying is not None or config.zero_constant is not None:
        X_zero = np.column_stack(
            [pick(config.zero_varying or ()), pick(config.zero_constant or ())]
        ) if (config.zero_q1 + config.zero_q2) else np.zeros((dataset.n, 0))
    else:
        X_zero = None
    return build_design_matrix(X, config, X_zero)


def _slice_design(design, sl):
    if isinstance(design, tuple):
        return design[0][sl], design[1][sl]
    return design[sl]


def _batch_slices(batch_of: np.ndarray):
    """Map batch index -> row slice; rows are time-sorted so slices are contiguous."""
    out = {}
    if batch_of.size == 0:
        return out
    for s in np.unique(batch_of):
        lo = np.searchsorted(batch_of, s, side="left")
        hi = np.searchsorted(batch_of, s, side="right")
        out[int(s)] = slice(int(lo), int(hi))
    return out


def _run_batches(
    state: GaussianState,
    dataset,
    config: ModelConfig,
    family: ObservationFamily,
    first_batch: int,
    last_batch: int,
    max_iter: int,
    tol: float,
):
    """Advance the recursion over batches [first_batch, last_batch].

    A first batch equal to the state's current index is filtered in place
    (continuation within the same interval, no prediction step).
    """
    transition = transition_matrix(config)
    noise = process_noise(config)
    design = design_for_dataset(dataset, config)
    slices = _batch_slices(dataset.batch_of)
    records = []
    for s in range(first_batch, last_batch + 1):
        if s == state.batch_index:
            predicted = state
        else:
            predicted = predict_step(state, transition, noise, batch_midpoint(s, config.S))
        sl = slices.get(s, slice(0, 0))
        y_s = dataset.y[sl]
        design_s = _slice_design(design, sl)
        if y_s.size:
            pll = batch_predictive_loglik(predicted, y_s, design_s, family)
        else:
            pll = 0.0
        try:
            filtered, n_iter = filter_step(predicted, y_s, design_s, family, max_iter, tol)
        except ConvergenceError as exc:
            raise ConvergenceError(f"batch {s}: {exc}", state=exc.state) from exc
        except NumericError as exc:
            raise NumericError(f"batch {s}: {exc}") from exc
        records.append(
            BatchRecord(
                batch_index=s,
                timepoint=predicted.timepoint,
                n_obs=int(y_s.size),
                predicted=predicted,
                filtered=filtered,
                newton_iterations=n_iter,
                predictive_loglik=pll,
            )
        )
        state = filtered
    return state, records


def fit(
    dataset,
    config: ModelConfig,
    family: ObservationFamily | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> ModelSnapshot:
    """Run the full batch recursion over a dataset with fixed smoothing.

    The smoothing parameters must already be set on the configuration (see
    the smoothing module for their selection).  ``family`` overrides the
    configured observation family; this is the hook validation tests use to
    substitute the Gaussian model.
    """
    if config.tau is None:
        raise ConfigError("fit requires smoothing parameters; run selection first or set tau")
    if dataset.S != config.S:
        raise ConfigError(f"dataset batched with S={dataset.S}, configuration has S={config.S}")
    if family is None:
        family = family_for_config(config)
    state = init_state(config)
    last = int(dataset.batch_of[-1]) if dataset.n else 0
    if last == 0:
        trace = FilterTrace(records=())
        return ModelSnapshot(config, state, _empty_summary(state.mean.size), _now(), full_trace=trace)
    state, records = _run_batches(state, dataset, config, family, 1, last, max_iter, tol)
    trace = FilterTrace(records=tuple(records))
    return ModelSnapshot(config, state, trace.summary(), _now(), full_trace=trace)


def update(
    snapshot: ModelSnapshot,
    new_data,
    family: ObservationFamily | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> ModelSnapshot:
    """Resume the recursion from a snapshot over newly arrived batches.

    New batches must not precede the snapshot's current batch; a first batch
    equal to the current one continues that interval, and gaps are bridged
    by pure prediction steps.  Smoothing parameters are not re-estimated
    here (see the smoothing module's refresh operation).
    """
    config = snapshot.config
    if new_data.n == 0:
        return snapshot
    if new_data.S != config.S:
        raise ConfigError(f"new data batched with S={new_data.S}, configuration has S={config.S}")
    if family is None:
        family = family_for_config(config)
    first = int(new_data.batch_of[0])
    last = int(new_data.batch_of[-1])
    current = snapshot.state.batch_index
    if first < current:
        raise SequencingError(
            f"new data starts at batch {first}, before the snapshot's batch {current}"
        )
    start = current if first == current else current + 1
    state, records = _run_batches(
        snapshot.state, new_data, config, family, start, last, max_iter, tol
    )
    new_trace = FilterTrace(records=tuple(records)).summary()
    return ModelSnapshot(
        config=config,
        state=state,
        trace=TraceSummary.concat(snapshot.trace, new_trace),
        created=_now(),
    )


def replace_state(snapshot: ModelSnapshot, **changes) -> ModelSnapshot:
    """Dataclass-replace helper (kept here so callers avoid dataclasses import)."""
    return replace(snapshot, **changes)
