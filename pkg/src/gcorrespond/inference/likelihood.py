"""Poisson and binomial likelihoods, deviances and Newton-Raphson modes."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from ..tables import BinomialData, ContingencyTable

log = logging.getLogger(__name__)

ETA_CLAMP = 500.0


class ModeFindingError(RuntimeError):
    pass


def _clamp(eta: np.ndarray) -> np.ndarray:
    if np.any(np.abs(eta) > ETA_CLAMP):
        warnings.warn(f"linear predictor clamped to ±{ETA_CLAMP:g}", RuntimeWarning, stacklevel=3)
        eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    return eta


def _matrix(X) -> np.ndarray:
    return np.asarray(getattr(X, "matrix", X), dtype=float)


def loglik_poisson(table: ContingencyTable, X_ll, lam) -> float:
    """sum_i n_i eta_i - exp(eta_i) - log n_i!, with eta = X lam."""
    n = np.asarray(table.counts, dtype=float)
    eta = _clamp(_matrix(X_ll) @ np.asarray(lam, dtype=float))
    return float(n @ eta - np.exp(eta).sum() - gammaln(n + 1).sum())


def loglik_binomial(data: BinomialData, X_lt, beta) -> float:
    """Grouped-binomial log-likelihood with logit link, binomial coefficients included."""
    t = np.asarray(data.trials, dtype=float)
    s = np.asarray(data.successes, dtype=float)
    eta = _clamp(_matrix(X_lt) @ np.asarray(beta, dtype=float))
    log_binom = gammaln(t + 1) - gammaln(s + 1) - gammaln(t - s + 1)
    return float(s @ eta - t @ np.logaddexp(0.0, eta) + log_binom.sum())


def deviance_poisson(counts, mu) -> float:
    n = np.asarray(counts, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(2.0 * np.sum(xlogy(n, n) - xlogy(n, mu) - (n - mu)))


def deviance_binomial(trials, successes, p) -> float:
    t = np.asarray(trials, dtype=float)
    s = np.asarray(successes, dtype=float)
    fitted = t * np.asarray(p, dtype=float)
    f = t - s
    return float(2.0 * np.sum(xlogy(s, s) - xlogy(s, fitted) + xlogy(f, f) - xlogy(f, t - fitted)))


@dataclass(frozen=True, eq=False)
class GLMProblem:
    """A design plus response for one of the two families used here."""

    family: str
    X: np.ndarray
    y: np.ndarray
    trials: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in ("poisson", "binomial"):
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "X", np.ascontiguousarray(self.X, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.family == "binomial":
            object.__setattr__(self, "trials", np.asarray(self.trials, dtype=float))
        if self.family == "poisson":
            const = -gammaln(self.y + 1).sum()
        else:
            t, s = self.trials, self.y
            const = (gammaln(t + 1) - gammaln(s + 1) - gammaln(t - s + 1)).sum()
        object.__setattr__(self, "const", float(const))

    @classmethod
    def from_data(cls, data, X) -> "GLMProblem":
        if isinstance(data, ContingencyTable):
            return cls("poisson", _matrix(X), data.counts)
        if isinstance(data, BinomialData):
            return cls("binomial", _matrix(X), data.successes, data.trials)
        raise TypeError(f"unsupported data type {type(data).__name__}")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def loglik(self, theta) -> float:
        eta = self.X @ theta
        if self.family == "poisson":
            if eta.max(initial=0.0) > ETA_CLAMP:
                return -np.inf
            return float(self.y @ eta - np.exp(eta).sum() + self.const)
        return float(self.y @ eta - self.trials @ np.logaddexp(0.0, eta) + self.const)

    def grad_hess(self, theta):
        eta = np.clip(self.X @ theta, -ETA_CLAMP, ETA_CLAMP)
        if self.family == "poisson":
            mu = np.exp(eta)
            resid, w = self.y - mu, mu
        else:
            p = 0.5 * (1.0 + np.tanh(0.5 * eta))
            resid, w = self.y - self.trials * p, self.trials * p * (1.0 - p)
        grad = self.X.T @ resid
        hess = -(self.X.T * w) @ self.X
        return grad, hess

    def fitted(self, theta) -> np.ndarray:
        """Expected counts (Poisson) or success probabilities (binomial)."""
        eta = np.clip(self.X @ theta, -ETA_CLAMP, ETA_CLAMP)
        if self.family == "poisson":
            return np.exp(eta)
        return 0.5 * (1.0 + np.tanh(0.5 * eta))

    def deviance(self, theta) -> float:
        if self.family == "poisson":
            return deviance_poisson(self.y, self.fitted(theta))
        return deviance_binomial(self.trials, self.y, self.fitted(theta))

    def start(self) -> np.ndarray:
        theta = np.zeros(self.dim)
        if self.family == "poisson":
            theta[0] = np.log(max(self.y.mean(), 1e-3))
        else:
            pbar = (self.y.sum() + 0.5) / (self.trials.sum() + 1.0)
            theta[0] = np.log(pbar / (1 - pbar))
        return theta


def newton_mode(problem: GLMProblem, precision: np.ndarray | None = None,
                prior_mean: np.ndarray | None = None, flat_first: bool = False,
                theta0=None, tol: float = 1e-10, max_iter: int = 200):
    """Maximize log-likelihood plus an optional Gaussian log-prior.

    ``precision`` is the prior precision of the penalized coordinates (all,
    or all but the first when ``flat_first``). Uses step-halving and, if
    the Hessian is not negative definite, a 1e-8 ridge. Returns
    ``(theta, hessian of the log target)``.
    """
    d = problem.dim
    P = np.zeros((d, d))
    m = np.zeros(d)
    if precision is not None:
        k = 1 if flat_first else 0
        P[k:, k:] = precision
        if prior_mean is not None:
            m[k:] = prior_mean

    def target(th):
        diff = th - m
        return problem.loglik(th) - 0.5 * diff @ P @ diff

    theta = problem.start() if theta0 is None else np.array(theta0, dtype=float)
    current = target(theta)
    for _ in range(max_iter):
        g, H = problem.grad_hess(theta)
        g = g - P @ (theta - m)
        H = H - P
        try:
            step = np.linalg.solve(-H, g)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.solve(-H + 1e-8 * np.eye(d), g)
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            val = target(cand)
            if np.isfinite(val) and val >= current - 1e-12 * abs(current):
                break
            t *= 0.5
        else:
            break
        theta, previous, current = cand, current, val
        small_step = np.max(np.abs(t * step)) < tol
        flat = abs(current - previous) < tol * (1 + abs(current)) and np.max(np.abs(g)) < 1e-6
        if small_step or flat:
            break
    else:
        log.debug("newton_mode hit max_iter=%d", max_iter)
    _, H = problem.grad_hess(theta)
    H = H - P
    if not np.all(np.isfinite(theta)):
        raise ModeFindingError("mode finding diverged")
    return theta, H


def fit_mle(data, X) -> np.ndarray:
    """Maximum likelihood estimate by Newton-Raphson."""
    theta, _ = newton_mode(GLMProblem.from_data(data, X))
    return theta


def deviance(data, X, at) -> float:
    """Deviance of the model with design ``X`` evaluated at parameters ``at``."""
    return GLMProblem.from_data(data, X).deviance(np.asarray(at, dtype=float))
