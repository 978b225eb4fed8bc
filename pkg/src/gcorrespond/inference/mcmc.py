"""Adaptive random-walk Metropolis for a single log-linear or logistic model."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..models import ModelFormula, design_matrix
from ..priors import GPriorSpec, InverseGammaMixture, center_columns
from .likelihood import GLMProblem, fit_mle, newton_mode
from .summary import PosteriorSummary, summarize

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    pass


@dataclass
class MCMCSettings:
    burn_in: int = 100_000
    iterations: int = 200_000
    seed: int = 0
    level: float = 0.95
    target_accept: float = 0.234
    use_likelihood: bool = True
    adapt_every: int = 200


@dataclass
class Chain:
    draws: np.ndarray
    labels: list[str]
    acceptance_rate: float
    seed: int
    burn_in: int
    kept: int
    g_draws: np.ndarray | None = None
    proposal_scale: float = 1.0
    notes: list[str] = field(default_factory=list)


class LogPosterior:
    """Log-likelihood plus the (conditional on g) Normal log-prior.

    With a flat-intercept prior the first coordinate is unpenalized.
    """

    def __init__(self, problem: GLMProblem, prior: GPriorSpec, use_likelihood: bool = True):
        self.problem = problem
        self.prior = prior
        self.offset = 1 if prior.intercept_flat else 0
        if prior.dim + self.offset != problem.dim:
            raise ValueError(f"prior has {prior.dim} coordinates but the design has {problem.dim} "
                             f"columns{' (flat intercept)' if self.offset else ''}")
        if not use_likelihood and prior.intercept_flat:
            raise ValueError("a prior-only run needs a proper prior")
        self.use_likelihood = use_likelihood
        self.mean = prior.mean
        self.precision = prior.precision() if prior.dim else np.zeros((0, 0))
        sign, logdet = np.linalg.slogdet(prior.sigma) if prior.dim else (1.0, 0.0)
        self.logdet_sigma = logdet

    def quad(self, theta) -> float:
        diff = theta[self.offset:] - self.mean
        return float(diff @ self.precision @ diff)

    def log_prior(self, theta, g: float) -> float:
        p = self.prior.dim
        return -0.5 * self.quad(theta) / g - 0.5 * p * np.log(2 * np.pi * g) - 0.5 * self.logdet_sigma

    def __call__(self, theta, g: float) -> float:
        lp = self.log_prior(theta, g)
        if self.use_likelihood:
            lp += self.problem.loglik(theta)
        return lp

    def mode(self, g: float):
        """Posterior mode and covariance (inverse negative Hessian) at fixed g."""
        if not self.use_likelihood:
            cov = g * self.prior.sigma
            return self.mean.copy(), cov
        theta, H = newton_mode(self.problem, self.precision / g, self.mean,
                               flat_first=bool(self.offset))
        cov = np.linalg.inv(-H)
        return theta, 0.5 * (cov + cov.T)


def g_conditional(theta, prior: GPriorSpec, quad: float | None = None) -> tuple[float, float]:
    """Shape and scale of the inverse-gamma full conditional of g.

    g | theta ~ IG(a + p/2, b + Q/2) with Q = (theta-m)' sigma^-1 (theta-m).
    ``theta`` excludes a flat intercept. ``quad`` may be passed to reuse Q.
    """
    law = prior.g_law
    if not isinstance(law, InverseGammaMixture):
        raise ValueError("g is only updated under an inverse-gamma mixture")
    if quad is None:
        diff = np.asarray(theta, dtype=float) - prior.mean
        quad = float(diff @ prior.precision() @ diff)
    return law.a + 0.5 * prior.dim, law.b + 0.5 * quad


def gibbs_update_g(theta, prior: GPriorSpec, rng: np.random.Generator, quad: float | None = None) -> float:
    """Draw g from its inverse-gamma full conditional (see :func:`g_conditional`)."""
    shape, scale = g_conditional(theta, prior, quad)
    return scale / rng.gamma(shape)


def problem_for(model: ModelFormula, data, prior: GPriorSpec):
    X = design_matrix(data, model)
    M = np.asarray(X.matrix)
    if prior.intercept_flat:
        M = center_columns(M, prior.weights)
    return X, GLMProblem.from_data(data, M)


def fit_mcmc(model: ModelFormula, data, prior: GPriorSpec,
             settings: MCMCSettings | None = None) -> tuple[Chain, PosteriorSummary]:
    """Adaptive random-walk Metropolis over the full parameter block.

    The chain starts at the posterior mode with the inverse Hessian as
    proposal covariance. During burn-in the covariance tracks the chain's
    empirical covariance and a global scale is tuned by Robbins-Monro
    toward ``target_accept``; both are frozen afterwards. Under an
    inverse-gamma mixture g gets a Gibbs update every iteration.
    """
    settings = settings or MCMCSettings()
    X, problem = problem_for(model, data, prior)
    labels = X.label_strings()
    target = LogPosterior(problem, prior, settings.use_likelihood)
    mixture = isinstance(prior.g_law, InverseGammaMixture)
    rng = np.random.default_rng(settings.seed)

    g = prior.g_law.value()
    theta, cov = target.mode(g)
    lp = target(theta, g)
    if not np.isfinite(lp):
        raise SamplerError("log posterior is not finite at the initial point")

    d = theta.size
    L = np.linalg.cholesky(cov)
    log_scale = np.log(2.38 / np.sqrt(d))
    total = settings.burn_in + settings.iterations
    kept = settings.iterations
    draws = np.empty((kept, d))
    g_draws = np.empty(kept) if mixture else None
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    n_adapt = 0
    accepted = 0
    block = 4096
    min_adapt = max(500, 20 * d)

    for start in range(0, total, block):
        stop = min(start + block, total)
        z = rng.standard_normal((stop - start, d))
        log_u = np.log(rng.random(stop - start))
        for k, it in enumerate(range(start, stop)):
            burning = it < settings.burn_in
            prop = theta + np.exp(log_scale) * (L @ z[k])
            lp_prop = target(prop, g)
            log_alpha = lp_prop - lp if np.isfinite(lp_prop) else -np.inf
            if log_u[k] < log_alpha:
                theta, lp = prop, lp_prop
                if not burning:
                    accepted += 1
            if mixture:
                g = gibbs_update_g(None, prior, rng, quad=target.quad(theta))
                lp = target(theta, g)
            if burning:
                alpha = np.exp(min(0.0, log_alpha))
                log_scale += (it + 1) ** -0.6 * (alpha - settings.target_accept)
                s1 += theta
                s2 += np.outer(theta, theta)
                n_adapt += 1
                if n_adapt >= min_adapt and n_adapt % settings.adapt_every == 0:
                    mu = s1 / n_adapt
                    emp = s2 / n_adapt - np.outer(mu, mu)
                    emp = 0.5 * (emp + emp.T) + 1e-10 * np.eye(d)
                    try:
                        L = np.linalg.cholesky(emp)
                    except np.linalg.LinAlgError:
                        pass
            else:
                j = it - settings.burn_in
                draws[j] = theta
                if mixture:
                    g_draws[j] = g

    rate = accepted / kept if kept else 0.0
    chain = Chain(draws, labels, rate, settings.seed, settings.burn_in, kept, g_draws,
                  float(np.exp(log_scale)))
    if kept and accepted == 0:
        msg = "no proposals accepted after adaptation"
        log.warning(msg)
        chain.notes.append(msg)
    summary = summarize(chain, settings.level, labels)
    if settings.use_likelihood:
        summary.deviance_at_mean = problem.deviance(summary.mean)
        try:
            summary.deviance_at_mle = problem.deviance(fit_mle(data, problem.X))
        except Exception as exc:  # noqa: BLE001 - MLE may not exist with sparse data
            log.warning("MLE deviance unavailable: %s", exc)
    summary.extra["acceptance_rate"] = rate
    if mixture:
        summary.extra["g_mean"] = float(g_draws.mean())
    return chain, summary


def write_chain_csv(chain: Chain, path) -> None:
    with open(os.fspath(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(chain.labels) + (["g"] if chain.g_draws is not None else [])
        w.writerow(header)
        for j, row in enumerate(chain.draws):
            vals = [repr(float(v)) for v in row]
            if chain.g_draws is not None:
                vals.append(repr(float(chain.g_draws[j])))
            w.writerow(vals)
