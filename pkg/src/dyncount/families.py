"""Observation families: log-likelihoods, derivatives, mean maps and pmfs.

Each family exposes vectorized methods in terms of its linear predictor(s)
eta; the chain rule composition with design rows happens in the filter.  The
zero-inflated family works on a predictor pair (rate, zero) and returns the
2x2 predictor-block second derivatives needed for its Hessian.

A Gaussian family with known variance is included as a validation hook: the
Laplace filtering and predictive formulas are exact for it, so it lets tests
compare against the closed-form Kalman filter.  It is not selectable from a
model configuration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .errors import ConfigError, DataError, NumericWarning

#: Linear predictors are clamped to this magnitude inside exponentials;
#: diffuse priors let early Newton iterates wander far enough to overflow.
ETA_CLAMP = 30.0


def clamped_exp(eta: np.ndarray) -> np.ndarray:
    """exp(eta) with |eta| clamped; records a numeric warning when active."""
    eta = np.asarray(eta, dtype=float)
    if np.any(np.abs(eta) > ETA_CLAMP):
        warnings.warn(
            f"linear predictor exceeded |eta| <= {ETA_CLAMP}; exponential evaluated at the clamp",
            NumericWarning,
            stacklevel=2,
        )
        eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    return np.exp(eta)


def _check_counts(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise DataError("counts must be non-negative integers")
    return y


@dataclass(frozen=True)
class FamilyEval:
    """One observation's contribution to the posterior log-density."""

    loglik: float
    grad: np.ndarray
    hess: np.ndarray


class ObservationFamily:
    """Vectorized per-observation likelihood interface."""

    name: str = ""
    n_predictors: int = 1
    #: count families support pmf(); the Gaussian hook does not
    is_count: bool = True

    def loglik(self, y, eta) -> np.ndarray:
        raise NotImplementedError

    def predictor_derivs(self, y, eta):
        """First and second log-likelihood derivatives w.r.t. the predictor(s).

        Single-predictor families return (d1, d2), both shaped like eta.
        Two-predictor families take eta of shape (n, 2) and return
        (d1, d2) with d1 of shape (n, 2) and d2 of shape (n, 3) packing
        (d2_rr, d2_zz, d2_rz).
        """
        raise NotImplementedError

    def mean(self, eta) -> np.ndarray:
        raise NotImplementedError

    def pmf(self, k, eta) -> np.ndarray:
        raise NotImplementedError


class Poisson(ObservationFamily):
    name = "poisson"

    def loglik(self, y, eta):
        y = np.asarray(y, dtype=float)
        return y * eta - clamped_exp(eta) - gammaln(y + 1.0)

    def predictor_derivs(self, y, eta):
        lam = clamped_exp(eta)
        return np.asarray(y, dtype=float) - lam, -lam

    def mean(self, eta):
        return clamped_exp(eta)

    def pmf(self, k, eta):
        lam = clamped_exp(eta)
        k = np.asarray(k, dtype=float)
        return np.exp(k * np.log(lam) - lam - gammaln(k + 1.0))


class ZeroInflatedPoisson(ObservationFamily):
    """Mixture placing extra mass at zero with probability expit(eta_zero)."""

    name = "zip"
    n_predictors = 2

    @staticmethod
    def _split(eta):
        eta = np.asarray(eta, dtype=float)
        return eta[..., 0], eta[..., 1]

    def loglik(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta_r, eta_z = self._split(eta)
        lam = clamped_exp(eta_r)
        # y = 0 branch via log-sum-exp: log(e^v + e^-lam) - log(1 + e^v)
        log_denom = np.logaddexp(0.0, eta_z)
        zero_branch = np.logaddexp(eta_z, -lam) - log_denom
        pos_branch = y * eta_r - lam - gammaln(y + 1.0) - log_denom
        return np.where(y == 0, zero_branch, pos_branch)

    def predictor_derivs(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta_r, eta_z = self._split(eta)
        lam = clamped_exp(eta_r)
        s = expit(eta_z)
        # pi = P(structural zero | y=0) = expit(eta_z + lam)
        pi = expit(eta_z + lam)
        is_zero = y == 0
        d1 = np.empty(eta_r.shape + (2,))
        d2 = np.empty(eta_r.shape + (3,))
        d1[..., 0] = np.where(is_zero, -lam * (1.0 - pi), y - lam)
        d1[..., 1] = np.where(is_zero, pi - s, -s)
        d2[..., 0] = np.where(is_zero, lam * (1.0 - pi) * (lam * pi - 1.0), -lam)
        d2[..., 1] = np.where(is_zero, pi * (1.0 - pi) - s * (1.0 - s), -s * (1.0 - s))
        d2[..., 2] = np.where(is_zero, lam * pi * (1.0 - pi), 0.0)
        return d1, d2

    def mean(self, eta):
        eta_r, eta_z = self._split(eta)
        return (1.0 - expit(eta_z)) * clamped_exp(eta_r)

    def pmf(self, k, eta):
        eta_r, eta_z = self._split(eta)
        lam = clamped_exp(eta_r)
        s = expit(eta_z)
        k = np.asarray(k, dtype=float)
        pois = np.exp(k * np.log(lam) - lam - gammaln(k + 1.0))
        return np.where(k == 0, s + (1.0 - s) * np.exp(-lam), (1.0 - s) * pois)


class NegativeBinomial(ObservationFamily):
    """Poisson-gamma mixture with mean mu and variance mu + mu^2 / alpha."""

    name = "nb"

    def __init__(self, alpha: float):
        if not (alpha > 0):
            raise ConfigError("negative-binomial dispersion alpha must be positive")
        self.alpha = float(alpha)

    def loglik(self, y, eta):
        y = np.asarray(y, dtype=float)
        a = self.alpha
        mu = clamped_exp(eta)
        return (
            gammaln(y + a)
            - gammaln(a)
            - gammaln(y + 1.0)
            + a * np.log(a)
            + y * np.asarray(eta, dtype=float)
            - (y + a) * np.log(a + mu)
        )

    def predictor_derivs(self, y, eta):
        y = np.asarray(y, dtype=float)
        a = self.alpha
        mu = clamped_exp(eta)
        d1 = y - (y + a) * mu / (a + mu)
        d2 = -a * (y + a) * mu / (a + mu) ** 2
        return d1, d2

    def mean(self, eta):
        return clamped_exp(eta)

    def pmf(self, k, eta):
        a = self.alpha
        mu = clamped_exp(eta)
        k = np.asarray(k, dtype=float)
        log_p = (
            gammaln(k + a)
            - gammaln(a)
            - gammaln(k + 1.0)
            + a * (np.log(a) - np.log(a + mu))
            + k * (np.log(mu) - np.log(a + mu))
        )
        return np.exp(log_p)


class Gaussian(ObservationFamily):
    """Known-variance Gaussian observations; validation hook only."""

    name = "gaussian"
    is_count = False

    def __init__(self, variance: float = 1.0):
        if not (variance > 0):
            raise ConfigError("observation variance must be positive")
        self.variance = float(variance)

    def loglik(self, y, eta):
        r = np.asarray(y, dtype=float) - np.asarray(eta, dtype=float)
        return -0.5 * r ** 2 / self.variance - 0.5 * np.log(2.0 * np.pi * self.variance)

    def predictor_derivs(self, y, eta):
        r = np.asarray(y, dtype=float) - np.asarray(eta, dtype=float)
        return r / self.variance, np.full_like(r, -1.0 / self.variance)

    def mean(self, eta):
        return np.asarray(eta, dtype=float)

    def pmf(self, k, eta):
        raise NotImplementedError("the Gaussian validation hook has no pmf")


def resolve_family(family, nb_alpha: float | None = None) -> ObservationFamily:
    """Map a family name (or pass through an instance) to a family object."""
    if isinstance(family, ObservationFamily):
        return family
    if family == "poisson":
        return Poisson()
    if family == "zip":
        return ZeroInflatedPoisson()
    if family == "nb":
        if nb_alpha is None:
            raise ConfigError("the negative-binomial family requires nb_alpha")
        return NegativeBinomial(nb_alpha)
    raise ConfigError(f"unknown family {family!r}")


def family_for_config(config) -> ObservationFamily:
    return resolve_family(config.family, config.nb_alpha)


def _as_eta(fam: ObservationFamily, eta):
    if fam.n_predictors == 2:
        eta = np.asarray(eta, dtype=float).reshape(-1)
        if eta.size != 2:
            raise ConfigError(f"family {fam.name!r} takes a predictor pair")
        return eta
    return float(np.asarray(eta).reshape(()))


def loglik(family, y, eta, nb_alpha: float | None = None) -> float:
    """Exact log-pmf of one observation at the given predictor(s)."""
    fam = resolve_family(family, nb_alpha)
    if fam.is_count:
        y = _check_counts(y)
    e = _as_eta(fam, eta)
    if not np.all(np.isfinite(e)):
        raise DataError("linear predictor must be finite")
    if fam.n_predictors == 2:
        return float(fam.loglik(np.asarray([y], dtype=float), e.reshape(1, 2))[0])
    return float(fam.loglik(np.asarray([y], dtype=float), np.asarray([e]))[0])


def grad_hess(family, y, design, gamma, nb_alpha: float | None = None) -> FamilyEval:
    """One observation's log-likelihood, gradient, and Hessian in state space.

    ``design`` is the state-space design row z for single-predictor families,
    or the pair (u, v) for the zero-inflated family; ``gamma`` is the state
    vector the derivatives are taken at.
    """
    fam = resolve_family(family, nb_alpha)
    if fam.is_count:
        y = _check_counts(y)
    gamma = np.asarray(gamma, dtype=float)
    y_arr = np.asarray([y], dtype=float)
    if fam.n_predictors == 2:
        u, v = (np.asarray(r, dtype=float) for r in design)
        eta = np.array([[u @ gamma, v @ gamma]])
        ll = float(fam.loglik(y_arr, eta)[0])
        d1, d2 = fam.predictor_derivs(y_arr, eta)
        grad = d1[0, 0] * u + d1[0, 1] * v
        hess = (
            d2[0, 0] * np.outer(u, u)
            + d2[0, 1] * np.outer(v, v)
            + d2[0, 2] * (np.outer(u, v) + np.outer(v, u))
        )
        return FamilyEval(ll, grad, hess)
    z = np.asarray(design, dtype=float)
    eta = np.asarray([z @ gamma])
    ll = float(fam.loglik(y_arr, eta)[0])
    d1, d2 = fam.predictor_derivs(y_arr, eta)
    return FamilyEval(ll, d1[0] * z, d2[0] * np.outer(z, z))


def mean(family, eta, nb_alpha: float | None = None) -> float:
    """Expected count at the given predictor(s)."""
    fam = resolve_family(family, nb_alpha)
    e = _as_eta(fam, eta)
    if fam.n_predictors == 2:
        return float(fam.mean(e.reshape(1, 2))[0])
    return float(fam.mean(np.asarray([e]))[0])


def pmf(family, k, eta, nb_alpha: float | None = None) -> float:
    """Probability of observing exactly k counts at the given predictor(s)."""
    fam = resolve_family(family, nb_alpha)
    k = _check_counts(k)
    e = _as_eta(fam, eta)
    if fam.n_predictors == 2:
        return float(fam.pmf(np.asarray([k], dtype=float), e.reshape(1, 2))[0])
    return float(fam.pmf(np.asarray([k], dtype=float), np.asarray([e]))[0])
