"""Smoothing-parameter selection by marginal predictive likelihood.

The objective is the sum over observations of the Laplace-approximated
log-density of each count conditioned on all previous batches.  It is
maximized over log10(tau) with a coarse grid pass followed by a
deterministic Nelder-Mead refinement clipped to the search box; for the
negative-binomial family the dispersion is appended to the search vector
and estimated jointly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, batch_midpoint, process_noise, transition_matrix
from .errors import ConfigError, ConvergenceError, DataError, NumericError, SelectionError
from .families import ObservationFamily, resolve_family
from .filtering import (
    ModelSnapshot,
    batch_predictive_loglik,
    filter_step,
    design_for_dataset,
    fit,
    init_state,
    predict_step,
    _batch_slices,
    _slice_design,
)


@dataclass(frozen=True)
class SmoothingSearchConfig:
    """Search-space and optimizer settings for smoothing selection."""

    log10_low: float = -4.0
    log10_high: float = 8.0
    optimizer: str = "simplex"       # "grid" (coarse pass only) or "simplex"
    grid_points: int = 5
    simplex_tol: float = 1e-2
    max_evaluations: int = 200
    nb_alpha_log10_low: float = -2.0
    nb_alpha_log10_high: float = 4.0

    def __post_init__(self):
        if not (np.isfinite(self.log10_low) and np.isfinite(self.log10_high)):
            raise ConfigError("search bounds must be finite")
        if self.log10_low >= self.log10_high:
            raise ConfigError("log10_low must be below log10_high")
        if self.grid_points < 2:
            raise ConfigError("grid resolution must be at least 2")
        if self.optimizer not in ("grid", "simplex"):
            raise ConfigError("optimizer must be 'grid' or 'simplex'")


@dataclass(frozen=True)
class SmoothingSelection:
    tau: tuple[float, ...]
    nb_alpha: float | None
    loglik: float
    n_evaluations: int


def predictive_loglik(
    dataset,
    config: ModelConfig,
    tau,
    nb_alpha: float | None = None,
    family: ObservationFamily | None = None,
) -> float:
    """Accumulated one-observation-ahead predictive log-likelihood.

    Runs the filter recursion at the given smoothing parameters; before each
    batch is filtered in, every observation in it contributes the Laplace
    approximation of its density under the batch's predicted state.  Returns
    -inf when any per-observation mode search fails, so an optimizer steps
    away; filter-level errors propagate.
    """
    tau = tuple(float(v) for v in tau)
    if family is None:
        family = resolve_family(
            config.family, nb_alpha if nb_alpha is not None else config.nb_alpha
        )
    transition = transition_matrix(config)
    noise = process_noise(config, tau)
    design = design_for_dataset(dataset, config)
    slices = _batch_slices(dataset.batch_of)
    state = init_state(config)
    last = int(dataset.batch_of[-1]) if dataset.n else 0
    total = 0.0
    for s in range(1, last + 1):
        state = predict_step(state, transition, noise, batch_midpoint(s, config.S))
        sl = slices.get(s, slice(0, 0))
        y_s = dataset.y[sl]
        if y_s.size == 0:
            continue
        design_s = _slice_design(design, sl)
        term = batch_predictive_loglik(state, y_s, design_s, family)
        if term == -np.inf:
            return -np.inf
        total += term
        state, _ = filter_step(state, y_s, design_s, family)
    return total


def _objective(dataset, config, search, family):
    """Map a log10 search vector to the predictive log-likelihood."""
    n_tau = config.n_smoothing
    joint_alpha = config.family == "nb"

    def evaluate(point: np.ndarray) -> float:
        tau = tuple(10.0 ** v for v in point[:n_tau])
        alpha = 10.0 ** point[n_tau] if joint_alpha else None
        try:
            return predictive_loglik(dataset, config, tau, nb_alpha=alpha, family=family)
        except (ConvergenceError, NumericError):
            return -np.inf

    return evaluate, n_tau, joint_alpha


def _bounds(search: SmoothingSearchConfig, n_tau: int, joint_alpha: bool):
    low = np.full(n_tau + (1 if joint_alpha else 0), search.log10_low)
    high = np.full_like(low, search.log10_high)
    if joint_alpha:
        low[-1] = search.nb_alpha_log10_low
        high[-1] = search.nb_alpha_log10_high
    return low, high


def _nelder_mead(evaluate, x0, f0, low, high, tol, budget, cache):
    """Deterministic bounded Nelder-Mead maximization.

    Points are clipped into the box, so a boundary optimum is reachable
    exactly; a vertex is replaced only when the objective improves by more
    than a tiny margin, which keeps plateau noise from walking the best
    point away from a grid optimum.
    """
    n = x0.size
    eps = lambda f: 1e-9 * (1.0 + abs(f))

    def clipped_eval(x):
        x = np.clip(x, low, high)
        key = tuple(x)
        if key not in cache:
            cache[key] = evaluate(x)
        return x, cache[key]

    spread = (high - low) / 8.0
    vertices = [x0]
    values = [f0]
    for i in range(n):
        step = np.zeros(n)
        step[i] = -spread[i] if x0[i] + spread[i] > high[i] else spread[i]
        v, f = clipped_eval(x0 + step)
        vertices.append(v)
        values.append(f)
    evals = n

    def order():
        idx = sorted(range(n + 1), key=lambda i: -values[i])
        return [vertices[i] for i in idx], [values[i] for i in idx]

    vertices, values = order()
    while evals < budget:
        finite = [v for v in values if np.isfinite(v)]
        if len(finite) == n + 1 and (values[0] - values[-1]) < tol:
            break
        centroid = np.mean(vertices[:-1], axis=0)
        worst = vertices[-1]
        reflected, f_r = clipped_eval(centroid + (centroid - worst))
        evals += 1
        if f_r > values[0] + eps(values[0]):
            expanded, f_e = clipped_eval(centroid + 2.0 * (centroid - worst))
            evals += 1
            if f_e > f_r + eps(f_r):
                vertices[-1], values[-1] = expanded, f_e
            else:
                vertices[-1], values[-1] = reflected, f_r
        elif f_r > values[-2] + eps(values[-2]):
            vertices[-1], values[-1] = reflected, f_r
        else:
            contracted, f_c = clipped_eval(centroid + 0.5 * (worst - centroid))
            evals += 1
            if f_c > values[-1] + eps(values[-1]):
                vertices[-1], values[-1] = contracted, f_c
            else:
                # shrink toward the best vertex
                for i in range(1, n + 1):
                    vertices[i], values[i] = clipped_eval(
                        vertices[0] + 0.5 * (vertices[i] - vertices[0])
                    )
                evals += n
        vertices, values = order()
    return vertices[0], values[0], evals


def select_smoothing(
    dataset,
    config: ModelConfig,
    search: SmoothingSearchConfig | None = None,
    family: ObservationFamily | None = None,
) -> SmoothingSelection:
    """Maximize the predictive likelihood over smoothing parameters.

    A coarse log-scale grid (including the box corners) seeds a bounded
    simplex refinement; for the negative-binomial family the dispersion is
    searched jointly on a log scale.  Raises SelectionError when every
    evaluation is -inf.
    """
    if search is None:
        search = SmoothingSearchConfig()
    non_empty = np.unique(dataset.batch_of).size if dataset.n else 0
    if non_empty < 2:
        raise DataError("smoothing selection needs at least two non-empty batches")
    evaluate, n_tau, joint_alpha = _objective(dataset, config, search, family)
    low, high = _bounds(search, n_tau, joint_alpha)
    axes = [np.linspace(low[i], high[i], search.grid_points) for i in range(low.size)]
    cache: dict = {}
    best_x, best_f = None, -np.inf
    n_evals = 0
    for point in itertools.product(*axes):
        x = np.asarray(point)
        f = evaluate(x)
        cache[tuple(x)] = f
        n_evals += 1
        if f > best_f:
            best_x, best_f = x, f
    if best_x is None or best_f == -np.inf:
        raise SelectionError("no smoothing-parameter evaluation produced a finite objective")
    if search.optimizer == "simplex":
        budget = max(search.max_evaluations - n_evals, 0)
        best_x, best_f, extra = _nelder_mead(
            evaluate, best_x, best_f, low, high, search.simplex_tol, budget, cache
        )
        n_evals += extra
    tau = tuple(10.0 ** v for v in best_x[:n_tau])
    alpha = float(10.0 ** best_x[n_tau]) if joint_alpha else None
    return SmoothingSelection(tau=tau, nb_alpha=alpha, loglik=float(best_f), n_evaluations=n_evals)


def refresh_smoothing(
    snapshot: ModelSnapshot,
    all_data,
    search: SmoothingSearchConfig | None = None,
    family: ObservationFamily | None = None,
) -> ModelSnapshot:
    """Re-select smoothing on all accumulated data and refit from scratch.

    Smoothness is a global feature of the coefficient curves, so this is
    meant to run occasionally rather than at every update.
    """
    selection = select_smoothing(all_data, snapshot.config, search, family)
    config = snapshot.config.with_tau(selection.tau, selection.nb_alpha)
    return fit(all_data, config, family=family)
