"""Model specification and state-space structural objects.

A model is a count regression whose linear predictor mixes time-varying
coefficients (each represented by a (value, derivative) pair evolving as an
integrated random walk) and time-invariant coefficients (single static
slots).  This module owns the model configuration, the slot layout of the
state vector, the design-row expansion, and the block transition /
process-noise matrices used by the batch filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError

FAMILIES = ("poisson", "zip", "nb")

#: Families whose likelihood involves two linear predictors (rate and
#: zero-inflation); everything else uses a single predictor.
TWO_PREDICTOR_FAMILIES = ("zip",)


@dataclass(frozen=True)
class ModelConfig:
    """Immutable model specification.

    Attributes:
        family: "poisson", "zip" or "nb".
        q1: number of varying-coefficient covariates (intercept excluded,
            it is always varying).
        q2: number of constant-coefficient covariates.
        S: number of equal batch intervals covering the training span [0, 1].
        prior_scale: diffuse prior variance c; the initial state is N(0, c*I).
        tau: smoothing parameters, one per varying coefficient including the
            intercept.  Length q1+1 for single-predictor families; for "zip"
            the rate-predictor block is followed by the zero-predictor block,
            so the length is (q1+1) + (zero_q1+1).  May be None until
            selected.
        nb_alpha: negative-binomial dispersion (variance mu + mu^2/alpha).
        zero_q1 / zero_q2: partition of the zero-inflation predictor for
            "zip"; default mirrors (q1, q2).
        varying / constant: optional covariate column names, in slot order.
        zero_varying / zero_constant: column names for the zero predictor.
        time_min / time_max: raw-time normalization record; times are mapped
            affinely onto [0, 1] using these bounds, and later times map
            above 1.
    """

    family: str
    q1: int
    q2: int
    S: int
    prior_scale: float = 100.0
    tau: tuple[float, ...] | None = None
    nb_alpha: float | None = None
    zero_q1: int | None = None
    zero_q2: int | None = None
    varying: tuple[str, ...] = ()
    constant: tuple[str, ...] = ()
    zero_varying: tuple[str, ...] | None = None
    zero_constant: tuple[str, ...] | None = None
    time_min: float | None = None
    time_max: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.q1 < 0 or self.q2 < 0:
            raise ConfigError("covariate counts q1, q2 must be non-negative")
        if self.S < 1:
            raise ConfigError("batch count S must be at least 1")
        if not (self.prior_scale > 0):
            raise ConfigError("prior_scale must be positive")
        if self.family == "zip":
            if self.zero_q1 is None:
                object.__setattr__(self, "zero_q1", self.q1)
            if self.zero_q2 is None:
                object.__setattr__(self, "zero_q2", self.q2)
            if self.zero_q1 < 0 or self.zero_q2 < 0:
                raise ConfigError("zero_q1, zero_q2 must be non-negative")
            if self.zero_varying is None and self.varying and self.zero_q1 == self.q1:
                object.__setattr__(self, "zero_varying", self.varying)
            if self.zero_constant is None and self.constant and self.zero_q2 == self.q2:
                object.__setattr__(self, "zero_constant", self.constant)
        else:
            if self.zero_q1 is not None or self.zero_q2 is not None:
                raise ConfigError("zero-predictor partition is only meaningful for the zip family")
        if self.tau is not None:
            object.__setattr__(self, "tau", tuple(float(v) for v in self.tau))
            if len(self.tau) != self.n_smoothing:
                raise ConfigError(
                    f"tau has length {len(self.tau)}, expected {self.n_smoothing}"
                )
            if any(not (v > 0) for v in self.tau):
                raise ConfigError("all smoothing parameters must be positive")
        if self.nb_alpha is not None and not (self.nb_alpha > 0):
            raise ConfigError("nb_alpha must be positive")
        if self.varying and len(self.varying) != self.q1:
            raise ConfigError("varying column list must have length q1")
        if self.constant and len(self.constant) != self.q2:
            raise ConfigError("constant column list must have length q2")
        if self.family == "zip":
            if self.zero_varying and len(self.zero_varying) != self.zero_q1:
                raise ConfigError("zero_varying column list must have length zero_q1")
            if self.zero_constant and len(self.zero_constant) != self.zero_q2:
                raise ConfigError("zero_constant column list must have length zero_q2")

    @property
    def n_smoothing(self) -> int:
        """Number of smoothing parameters (one per varying coefficient)."""
        if self.family == "zip":
            return (self.q1 + 1) + (self.zero_q1 + 1)
        return self.q1 + 1

    @property
    def two_predictors(self) -> bool:
        return self.family in TWO_PREDICTOR_FAMILIES

    def with_tau(self, tau: Iterable[float], nb_alpha: float | None = None) -> "ModelConfig":
        """Return a copy carrying the given smoothing parameters."""
        new = replace(self, tau=tuple(tau))
        if nb_alpha is not None:
            new = replace(new, nb_alpha=float(nb_alpha))
        return new

    def with_time_range(self, time_min: float, time_max: float) -> "ModelConfig":
        return replace(self, time_min=float(time_min), time_max=float(time_max))


def _block_dim(q1: int, q2: int) -> int:
    return 2 * (q1 + 1) + q2


def state_dimension(config: ModelConfig) -> int:
    """Length of the latent state vector."""
    d = _block_dim(config.q1, config.q2)
    if config.family == "zip":
        d += _block_dim(config.zero_q1, config.zero_q2)
    return d


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    kind: str        # "varying" | "constant"
    block: str       # "rate" | "zero"
    slots: tuple[int, ...]

    @property
    def value_slot(self) -> int:
        return self.slots[0]


@dataclass(frozen=True)
class StateLayout:
    """Ordered map from coefficient names to state-vector slots.

    Varying coefficients occupy two consecutive slots (value, derivative);
    constant coefficients occupy one.  The rate-predictor block comes first;
    the zip zero-predictor block, if any, is appended with the same internal
    ordering.
    """

    entries: tuple[LayoutEntry, ...]
    dimension: int
    _by_name: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        by_name = {e.name: e for e in self.entries}
        object.__setattr__(self, "_by_name", by_name)

    def slots(self, name: str) -> tuple[int, ...]:
        return self._by_name[name].slots

    def all_slots(self) -> list[int]:
        out = []
        for e in self.entries:
            out.extend(e.slots)
        return out


def _block_entries(q1, q2, varying, constant, block, offset):
    names_v = list(varying) if varying else [f"x{j}" for j in range(1, q1 + 1)]
    names_c = list(constant) if constant else [f"x{j}" for j in range(q1 + 1, q1 + q2 + 1)]
    prefix = "" if block == "rate" else "zero_"
    entries = []
    i = offset
    entries.append(LayoutEntry(prefix + "intercept", "varying", block, (i, i + 1)))
    i += 2
    for name in names_v:
        entries.append(LayoutEntry(prefix + name, "varying", block, (i, i + 1)))
        i += 2
    for name in names_c:
        entries.append(LayoutEntry(prefix + name, "constant", block, (i,)))
        i += 1
    return entries, i


def state_layout(config: ModelConfig) -> StateLayout:
    """Build the slot layout for a configuration."""
    entries, i = _block_entries(config.q1, config.q2, config.varying, config.constant, "rate", 0)
    if config.family == "zip":
        more, i = _block_entries(
            config.zero_q1, config.zero_q2, config.zero_varying, config.zero_constant, "zero", i
        )
        entries = entries + more
    return StateLayout(entries=tuple(entries), dimension=i)


def _block_transition(q1: int, q2: int, S: int) -> np.ndarray:
    d = _block_dim(q1, q2)
    T = np.eye(d)
    step = 1.0 / S
    for j in range(q1 + 1):
        T[2 * j, 2 * j + 1] = step
    return T


def transition_matrix(config: ModelConfig) -> np.ndarray:
    """Block-diagonal state transition over one batch interval of width 1/S."""
    T = _block_transition(config.q1, config.q2, config.S)
    if config.family == "zip":
        Tz = _block_transition(config.zero_q1, config.zero_q2, config.S)
        full = np.zeros((T.shape[0] + Tz.shape[0],) * 2)
        full[: T.shape[0], : T.shape[0]] = T
        full[T.shape[0]:, T.shape[0]:] = Tz
        return full
    return T


def _block_noise(q1: int, q2: int, S: int, tau: np.ndarray) -> np.ndarray:
    d = _block_dim(q1, q2)
    Q = np.zeros((d, d))
    h = 1.0 / S
    base = np.array([[h ** 3 / 3.0, h ** 2 / 2.0], [h ** 2 / 2.0, h]])
    for j in range(q1 + 1):
        Q[2 * j: 2 * j + 2, 2 * j: 2 * j + 2] = base / tau[j]
    return Q


def process_noise(config: ModelConfig, tau: Iterable[float] | None = None) -> np.ndarray:
    """Block-diagonal process-noise covariance for one batch interval.

    Each varying coefficient contributes a 2x2 integrated-random-walk block
    scaled by the inverse of its smoothing parameter; constant coefficients
    contribute exact zeros.  ``tau`` overrides ``config.tau`` when given
    (used by the smoothing-parameter search).
    """
    if tau is None:
        tau = config.tau
    if tau is None:
        raise ConfigError("smoothing parameters are not set")
    tau = np.asarray(tuple(tau), dtype=float)
    if tau.shape != (config.n_smoothing,):
        raise ConfigError(f"tau has length {tau.size}, expected {config.n_smoothing}")
    if np.any(tau <= 0):
        raise ConfigError("all smoothing parameters must be positive")
    n_rate = config.q1 + 1
    Q = _block_noise(config.q1, config.q2, config.S, tau[:n_rate])
    if config.family == "zip":
        Qz = _block_noise(config.zero_q1, config.zero_q2, config.S, tau[n_rate:])
        full = np.zeros((Q.shape[0] + Qz.shape[0],) * 2)
        full[: Q.shape[0], : Q.shape[0]] = Q
        full[Q.shape[0]:, Q.shape[0]:] = Qz
        return full
    return Q


def _expand_block(X: np.ndarray, q1: int, q2: int) -> np.ndarray:
    n = X.shape[0]
    d = _block_dim(q1, q2)
    Z = np.zeros((n, d))
    Z[:, 0] = 1.0
    for j in range(q1):
        Z[:, 2 + 2 * j] = X[:, j]
    if q2:
        Z[:, 2 * (q1 + 1):] = X[:, q1:]
    return Z


def _check_covariates(X: np.ndarray, expected: int, label: str) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != expected:
        raise ConfigError(f"{label} rows have {X.shape[1]} columns, expected {expected}")
    if not np.all(np.isfinite(X)):
        raise DataError(f"non-finite covariate value in {label} rows")
    return X


def build_design_matrix(X, config: ModelConfig, X_zero=None):
    """Expand covariate rows into state-space design rows.

    For single-predictor families returns an (n, d) matrix Z whose rows
    interleave covariate values with zeros at the derivative slots.  For
    "zip" returns the pair (U, V): U carries the rate-predictor covariates
    in the first block and zeros in the second, V the mirror image.
    ``X_zero`` supplies the zero-predictor covariates and defaults to ``X``.
    """
    X = _check_covariates(X, config.q1 + config.q2, "covariate")
    if config.family != "zip":
        return _expand_block(X, config.q1, config.q2)
    if X_zero is None:
        if config.zero_q1 + config.zero_q2 != config.q1 + config.q2:
            raise ConfigError("zip zero-predictor covariates required when partitions differ")
        X_zero = X
    X_zero = _check_covariates(X_zero, config.zero_q1 + config.zero_q2, "zero-predictor covariate")
    if X_zero.shape[0] != X.shape[0]:
        raise ConfigError("rate and zero covariate rows must align")
    n = X.shape[0]
    d_rate = _block_dim(config.q1, config.q2)
    d = state_dimension(config)
    U = np.zeros((n, d))
    V = np.zeros((n, d))
    U[:, :d_rate] = _expand_block(X, config.q1, config.q2)
    V[:, d_rate:] = _expand_block(X_zero, config.zero_q1, config.zero_q2)
    return U, V


def build_design_row(x, config: ModelConfig, x_zero=None):
    """Single-row convenience wrapper around :func:`build_design_matrix`."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if config.family != "zip":
        return build_design_matrix(x, config)[0]
    xz = None if x_zero is None else np.asarray(x_zero, dtype=float).reshape(1, -1)
    U, V = build_design_matrix(x, config, xz)
    return U[0], V[0]


def batch_midpoint(s: int, S: int) -> float:
    """Midpoint of batch interval s on the normalized time scale."""
    return (2.0 * s - 1.0) / (2.0 * S)
