"""g-priors for log-linear and logistic models, and mixtures over g."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np
import scipy.linalg as sla
from scipy import stats

RANK_RTOL = 1e-10


class RankDeficiencyError(np.linalg.LinAlgError):
    """Design Gram matrix is numerically singular."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class Fixed:
    g: float

    def value(self) -> float:
        return float(self.g)

    def to_dict(self):
        return {"law": "fixed", "g": float(self.g)}


@dataclass(frozen=True)
class UnitInformation:
    """g equal to the number of observations."""
    N: int

    def value(self) -> float:
        return float(self.N)

    def to_dict(self):
        return {"law": "unit-information", "g": float(self.N)}


@dataclass(frozen=True)
class InverseGammaMixture:
    """g ~ IG(a, b), density ∝ g^(-a-1) exp(-b/g)."""
    a: float
    b: float

    def value(self) -> float:
        """Prior mean of g (requires a > 1)."""
        return self.b / (self.a - 1.0)

    def logpdf(self, g):
        return stats.invgamma.logpdf(g, self.a, scale=self.b)

    def to_dict(self):
        return {"law": "inverse-gamma", "a": float(self.a), "b": float(self.b)}


GLaw = Union[Fixed, UnitInformation, InverseGammaMixture]


@dataclass(frozen=True, eq=False)
class GPriorSpec:
    """Normal prior N(mean, g * sigma) with a law on g.

    ``sigma = scale * (X' W X)^-1`` where W is ``diag(weights)`` (identity
    when ``weights`` is None). With ``intercept_flat`` the mean and sigma
    cover the non-intercept coordinates of a centered design and the
    intercept gets an improper flat density.
    """

    mean: np.ndarray
    sigma: np.ndarray
    g_law: GLaw
    intercept_flat: bool = False
    labels: tuple = ()
    scale: float = 1.0
    weights: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def with_law(self, g_law: GLaw) -> "GPriorSpec":
        return replace(self, g_law=g_law)

    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.sigma)

    def precision(self) -> np.ndarray:
        c = sla.cho_factor(self.sigma, lower=True)
        return sla.cho_solve(c, np.eye(self.dim))

    def logpdf(self, x, g: float | None = None) -> float:
        """Log density of the (conditional on g) Normal part.

        For a flat-intercept prior ``x`` may include the intercept as its
        first entry; it contributes nothing.
        """
        x = np.asarray(x, dtype=float)
        if self.intercept_flat and x.size == self.dim + 1:
            x = x[1:]
        g = self.g_law.value() if g is None else g
        return float(stats.multivariate_normal.logpdf(x, self.mean, g * self.sigma))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "sigma": self.sigma.tolist(),
            "g_law": self.g_law.to_dict(),
            "intercept_flat": self.intercept_flat,
            "labels": list(self.labels),
        }


def inverse_gram(X: np.ndarray, weights: np.ndarray | None = None,
                 labels: Sequence[str] = (), rtol: float = RANK_RTOL) -> np.ndarray:
    """(X' W X)^-1 via Cholesky, refusing numerically rank-deficient designs."""
    X = np.asarray(X, dtype=float)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    G = X.T @ (w[:, None] * X)
    tol = rtol * max(float(np.max(np.diag(G))), 0.0) if G.size else 0.0
    try:
        c, lower = sla.cho_factor(G, lower=True)
        ok = np.all(np.diag(c) ** 2 > tol)
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        _, r, piv = sla.qr(np.sqrt(w)[:, None] * X, pivoting=True, mode="economic")
        d = np.abs(np.diag(r))
        rank = int(np.sum(d > np.sqrt(rtol) * d.max())) if d.size else 0
        bad = [labels[j] if j < len(labels) else j for j in sorted(piv[rank:])]
        raise RankDeficiencyError(f"design is rank deficient (rank {rank} < {X.shape[1]}); "
                                  f"dependent column(s): {bad}", bad)
    inv = sla.cho_solve((c, lower), np.eye(G.shape[0]))
    return 0.5 * (inv + inv.T)


def _matrix_and_labels(X):
    if hasattr(X, "matrix"):
        return np.asarray(X.matrix, dtype=float), tuple(X.label_strings())
    return np.asarray(X, dtype=float), ()


def gprior_generic(X, variance_at_null: float, link_deriv_at_null: float,
                   dispersions, m1: float = 0.0, g_law: GLaw | None = None) -> GPriorSpec:
    """Generic GLM g-prior: sigma = V(m*) g'(m*)^2 (X' diag(1/phi) X)^-1, mean (m1, 0, ..., 0)."""
    M, labels = _matrix_and_labels(X)
    phi = np.broadcast_to(np.asarray(dispersions, dtype=float), (M.shape[0],))
    if np.any(phi <= 0):
        raise ValueError("dispersions must be positive")
    scale = float(variance_at_null) * float(link_deriv_at_null) ** 2
    weights = 1.0 / phi
    sigma = scale * inverse_gram(M, weights, labels)
    mean = np.zeros(M.shape[1])
    mean[0] = m1
    return GPriorSpec(mean, sigma, g_law if g_law is not None else Fixed(1.0),
                      labels=labels, scale=scale,
                      weights=None if np.all(weights == weights[0]) and weights[0] == 1 else weights)


def gprior_loglinear(X_ll, table, g_law: GLaw | None = None) -> GPriorSpec:
    """Log-linear g-prior: mean (log n̄, 0, ...), sigma = (n_ll/N) (X'X)^-1."""
    M, labels = _matrix_and_labels(X_ll)
    N = table.N
    if N <= 0:
        raise ValueError("table has no observations (N = 0)")
    n_ll = table.n_cells
    if M.shape[0] != n_ll:
        raise ValueError(f"design has {M.shape[0]} rows but the table has {n_ll} cells")
    sigma = (n_ll / N) * inverse_gram(M, None, labels)
    mean = np.zeros(M.shape[1])
    mean[0] = np.log(N / n_ll)
    law = g_law if g_law is not None else UnitInformation(N)
    return GPriorSpec(mean, sigma, law, labels=labels, scale=n_ll / N)


def gprior_logistic(X_lt, data, g_law: GLaw | None = None, exact_trials: bool = False) -> GPriorSpec:
    """Logistic g-prior: mean 0, sigma = 4 (n_lt/N) (X'X)^-1.

    The trial counts enter only through their average. ``exact_trials``
    instead uses 4 (X' diag(t) X)^-1 and is meant for sensitivity checks.
    """
    M, labels = _matrix_and_labels(X_lt)
    N = data.N
    if N <= 0:
        raise ValueError("binomial data have no trials (N = 0)")
    n_lt = data.n_rows
    if M.shape[0] != n_lt:
        raise ValueError(f"design has {M.shape[0]} rows but the data have {n_lt}")
    law = g_law if g_law is not None else UnitInformation(N)
    mean = np.zeros(M.shape[1])
    if exact_trials:
        t = np.asarray(data.trials, dtype=float)
        return GPriorSpec(mean, 4.0 * inverse_gram(M, t, labels), law, labels=labels,
                          scale=4.0, weights=t)
    sigma = 4.0 * (n_lt / N) * inverse_gram(M, None, labels)
    return GPriorSpec(mean, sigma, law, labels=labels, scale=4.0 * n_lt / N)


def mixture_ig_params(N: float, var_g: float) -> tuple[float, float]:
    """IG(a, b) with mean N and variance close to ``var_g``."""
    if var_g <= 0:
        raise ValueError("var_g must be positive")
    a = 2 + N ** 2 / var_g
    b = N + N ** 3 / var_g
    return a, b


def center_columns(X: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Center every column except the first (intercept) one."""
    X = np.array(X, dtype=float)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    means = (w @ X[:, 1:]) / w.sum()
    X[:, 1:] -= means
    return X


def apply_flat_intercept(spec: GPriorSpec, X) -> tuple[GPriorSpec, np.ndarray]:
    """Flat prior on the intercept; g-prior on the remaining, centered columns.

    Returns the reduced prior and the centered design (intercept column
    kept first).
    """
    if spec.intercept_flat:
        raise ValueError("prior already has a flat intercept")
    M, labels = _matrix_and_labels(X)
    Xc = center_columns(M, spec.weights)
    if M.shape[1] == 1:
        sigma = np.zeros((0, 0))
    else:
        sigma = spec.scale * inverse_gram(Xc[:, 1:], spec.weights, labels[1:])
    flat = GPriorSpec(np.zeros(M.shape[1] - 1), sigma, spec.g_law, intercept_flat=True,
                      labels=tuple(spec.labels[1:]), scale=spec.scale, weights=spec.weights)
    return flat, Xc


def prior_from_option(option: str, N: int) -> GLaw:
    """Parse ``N``, ``fixed:<g>`` or ``ig:<var_g>``."""
    option = option.strip()
    if option.upper() == "N":
        return UnitInformation(N)
    kind, _, value = option.partition(":")
    if kind == "fixed":
        return Fixed(float(value))
    if kind == "ig":
        return InverseGammaMixture(*mixture_ig_params(N, float(value)))
    raise ValueError(f"unrecognised g option {option!r}; use N, fixed:<g> or ig:<var>")
