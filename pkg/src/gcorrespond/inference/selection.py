"""Posterior model probabilities over graphical model spaces.

Two routes share the same per-model ingredients (design, g-prior, Laplace
approximation of the within-model posterior):

* ``mode="rj"``: reversible jump. A between-model move toggles one edge
  of the interaction graph and proposes the new model's parameters from
  its Laplace approximation; the reverse move would draw the current
  parameters from the current model's Laplace approximation, so the
  acceptance ratio is a ratio of target-over-proposal densities. Each
  sweep also makes a random-walk update within the current model.
* ``mode="enumerate"``: Laplace-approximated marginal likelihoods for
  every model, normalized under the uniform model prior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ..models import (ModelFormula, close_hierarchical, design_matrix, enumerate_graphical,
                      graph_edges, graphical_model, graphical_vertices, model_edges, sort_terms)
from ..priors import (GLaw, GPriorSpec, InverseGammaMixture, UnitInformation, apply_flat_intercept,
                      gprior_logistic, gprior_loglinear)
from ..tables import BinomialData, ContingencyTable
from .likelihood import GLMProblem, ModeFindingError
from .mcmc import LogPosterior, gibbs_update_g

log = logging.getLogger(__name__)

MAX_RJ_MODELS = 2 ** 21
MAX_ENUMERATE = 2 ** 15


class SelectionError(ValueError):
    pass


@dataclass
class SelectionSettings:
    mode: str = "rj"
    iterations: int = 20_000
    burn_in: int = 2_000
    seed: int = 0
    g_law: GLaw | None = None
    flat_intercept: bool = False
    within_steps: int = 1
    quad_nodes: int = 5
    init: ModelFormula | None = None


class GraphicalSpace:
    """All graphical models on the factors (log-linear) or covariates (logistic)."""

    def __init__(self, names, role: str = "loglinear", outcome: str | None = None):
        self.names = list(names)
        self.role = role
        self.outcome = outcome if role == "logistic" else None
        self.vertices = graphical_vertices(self.names, role, outcome)
        self.edges = graph_edges(self.vertices)
        self._bit = {frozenset(e): i for i, e in enumerate(self.edges)}
        self._cache: dict[int, ModelFormula] = {}

    def __len__(self):
        return 2 ** len(self.edges)

    def __iter__(self):
        return enumerate_graphical(self.names, self.role, self.outcome)

    def formula(self, mask: int) -> ModelFormula:
        f = self._cache.get(mask)
        if f is None:
            edges = [e for i, e in enumerate(self.edges) if mask >> i & 1]
            f = graphical_model(self.vertices, edges, self.role, self.outcome)
            self._cache[mask] = f
        return f

    def mask(self, formula: ModelFormula) -> int:
        m = 0
        for e in model_edges(formula):
            m |= 1 << self._bit[e]
        return m


@dataclass
class ModelPosterior:
    probabilities: dict
    visits: dict = field(default_factory=dict)
    method: str = "rj"
    acceptance_rate: float | None = None
    log_marginals: dict | None = None
    iterations: int = 0

    def top(self, k: int = 5) -> list[tuple[ModelFormula, float]]:
        return sorted(self.probabilities.items(), key=lambda kv: -kv[1])[:k]

    def modal(self) -> ModelFormula:
        return self.top(1)[0][0]

    def probability(self, formula: ModelFormula) -> float:
        return float(self.probabilities.get(formula, 0.0))

    def total_variation(self, other: "ModelPosterior") -> float:
        keys = set(self.probabilities) | set(other.probabilities)
        return 0.5 * sum(abs(self.probability(k) - other.probability(k)) for k in keys)

    def to_dict(self, order=None, k: int = 10) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "acceptance_rate": self.acceptance_rate,
            "n_models": len(self.probabilities),
            "top": [{"model": f.describe(order), "probability": p} for f, p in self.top(k)],
        }


def default_prior_builder(g_law: GLaw | None = None, flat_intercept: bool = False) -> Callable:
    """Unit-information (or ``g_law``) g-prior matching the data's family."""

    def build(X, data) -> tuple[GPriorSpec, np.ndarray]:
        law = g_law if g_law is not None else UnitInformation(data.N)
        if isinstance(data, ContingencyTable):
            prior = gprior_loglinear(X, data, law)
        else:
            prior = gprior_logistic(X, data, law)
        if flat_intercept:
            return apply_flat_intercept(prior, X)
        return prior, np.asarray(X, dtype=float)

    return build


class _Fit:
    """Laplace approximation and Metropolis ingredients for one model."""

    def __init__(self, formula, X, data, prior_builder, g_ref):
        prior, design = prior_builder(X, data)
        self.formula = formula
        self.prior = prior
        self.target = LogPosterior(GLMProblem.from_data(data, design), prior)
        self.mode, cov = self.target.mode(g_ref)
        self.chol = np.linalg.cholesky(cov)
        self.whiten = np.linalg.inv(self.chol)
        self.dim = self.mode.size
        self.log_norm = -np.log(np.diag(self.chol)).sum() - 0.5 * self.dim * np.log(2 * np.pi)
        self.rw_chol = (2.38 / np.sqrt(self.dim)) * self.chol

    def log_q(self, theta) -> float:
        w = self.whiten @ (theta - self.mode)
        return self.log_norm - 0.5 * float(w @ w)

    def log_marginal(self, g: float) -> float:
        mode, cov = self.target.mode(g)
        sign, logdet = np.linalg.slogdet(cov)
        return self.target(mode, g) + 0.5 * self.dim * np.log(2 * np.pi) + 0.5 * logdet


class _Designs:
    """Column subsets of the saturated design, one per model."""

    def __init__(self, data, vertices):
        self.data = data
        names = [f.name for f in data.factors]
        sat = close_hierarchical([frozenset(vertices)] if vertices else [])
        if isinstance(data, BinomialData):
            sat = ModelFormula(sat.terms, role="logistic", outcome=data.outcome)
        self.full = design_matrix(data, sat)
        self.names = names
        self.columns: dict[frozenset, list[int]] = {}
        for j, (facs, _) in enumerate(self.full.labels):
            self.columns.setdefault(frozenset(facs), []).append(j)

    def __call__(self, formula: ModelFormula) -> np.ndarray:
        cols = [j for t in sort_terms(formula.terms, self.names) for j in self.columns[t]]
        return self.full.matrix[:, cols]


def _check_data(space: GraphicalSpace, data):
    if space.role == "loglinear" and not isinstance(data, ContingencyTable):
        raise SelectionError("log-linear selection needs a ContingencyTable")
    if space.role == "logistic" and not isinstance(data, BinomialData):
        raise SelectionError("logistic selection needs BinomialData")


def _g_nodes(law, n_nodes: int) -> np.ndarray:
    if isinstance(law, InverseGammaMixture):
        u = (np.arange(n_nodes) + 0.5) / n_nodes
        return stats.invgamma.ppf(u, law.a, scale=law.b)
    return np.array([law.value()])


def select_models(space, data, settings: SelectionSettings | None = None,
                  prior_builder: Callable | None = None) -> ModelPosterior:
    """Posterior probabilities of the models in ``space`` under a uniform model prior.

    ``space`` is a :class:`GraphicalSpace` (either mode) or any iterable of
    formulas (enumeration only). ``prior_builder(X, data)`` returns the
    prior and the design the likelihood should use.
    """
    settings = settings or SelectionSettings()
    builder = prior_builder or default_prior_builder(settings.g_law, settings.flat_intercept)
    law = settings.g_law if settings.g_law is not None else UnitInformation(data.N)
    if settings.mode == "enumerate":
        return _enumerate(space, data, settings, builder, law)
    if settings.mode != "rj":
        raise SelectionError(f"unknown selection mode {settings.mode!r}")
    if not isinstance(space, GraphicalSpace):
        raise SelectionError("reversible jump needs a GraphicalSpace (edge-toggle neighbourhood)")
    if len(space) > MAX_RJ_MODELS:
        raise SelectionError(f"model space of {len(space)} models is too large")
    return _reversible_jump(space, data, settings, builder, law)


def _enumerate(space, data, settings, builder, law) -> ModelPosterior:
    formulas = list(space)
    if len(formulas) > MAX_ENUMERATE:
        raise SelectionError(f"{len(formulas)} models exceed the enumeration limit {MAX_ENUMERATE}")
    if isinstance(space, GraphicalSpace):
        _check_data(space, data)
        vertices = space.vertices
    else:
        vertices = sorted(set().union(*(f.factors for f in formulas)), key=[f.name for f in data.factors].index)
    designs = _Designs(data, vertices)
    nodes = _g_nodes(law, settings.quad_nodes)
    logml = {}
    for f in formulas:
        try:
            fit = _Fit(f, designs(f), data, builder, law.value())
            vals = [fit.log_marginal(g) for g in nodes]
            logml[f] = float(logsumexp(vals) - np.log(len(vals)))
        except (ModeFindingError, np.linalg.LinAlgError) as exc:
            log.warning("Laplace approximation failed for %s: %s", f, exc)
    keys = list(logml)
    vals = np.array([logml[k] for k in keys])
    probs = np.exp(vals - logsumexp(vals))
    return ModelPosterior(dict(zip(keys, probs.tolist())), method="enumerate", log_marginals=logml,
                          iterations=len(formulas))


def _reversible_jump(space: GraphicalSpace, data, settings, builder, law) -> ModelPosterior:
    _check_data(space, data)
    designs = _Designs(data, space.vertices)
    rng = np.random.default_rng(settings.seed)
    mixture = isinstance(law, InverseGammaMixture)
    g_ref = law.value()
    fits: dict[int, _Fit | None] = {}

    def get(mask):
        if mask not in fits:
            f = space.formula(mask)
            try:
                fits[mask] = _Fit(f, designs(f), data, builder, g_ref)
            except (ModeFindingError, np.linalg.LinAlgError) as exc:
                log.warning("Laplace approximation failed for %s; moves to it are rejected (%s)", f, exc)
                fits[mask] = None
        return fits[mask]

    mask = space.mask(settings.init) if settings.init is not None else 0
    fit = get(mask)
    if fit is None:
        raise SelectionError("initial model could not be fitted")
    g = g_ref
    theta = fit.mode.copy()
    lp = fit.target(theta, g)
    lq = fit.log_q(theta)
    n_edges = len(space.edges)
    visits: dict[int, int] = {}
    proposed = accepted = 0
    total = settings.burn_in + settings.iterations

    for it in range(total):
        for _ in range(settings.within_steps):
            prop = theta + fit.rw_chol @ rng.standard_normal(fit.dim)
            lp_prop = fit.target(prop, g)
            if np.log(rng.random()) < lp_prop - lp:
                theta, lp = prop, lp_prop
        lq = fit.log_q(theta)

        if n_edges:
            new_mask = mask ^ (1 << int(rng.integers(n_edges)))
            new = get(new_mask)
            proposed += 1
            if new is not None:
                z = rng.standard_normal(new.dim)
                theta_new = new.mode + new.chol @ z
                lq_new = new.log_norm - 0.5 * float(z @ z)
                lp_new = new.target(theta_new, g)
                if np.log(rng.random()) < (lp_new - lq_new) - (lp - lq):
                    mask, fit, theta, lp, lq = new_mask, new, theta_new, lp_new, lq_new
                    accepted += 1

        if mixture:
            g = gibbs_update_g(None, fit.prior, rng, quad=fit.target.quad(theta))
            lp = fit.target(theta, g)

        if it >= settings.burn_in:
            visits[mask] = visits.get(mask, 0) + 1

    n = sum(visits.values())
    probs = {space.formula(m): c / n for m, c in visits.items()}
    counts = {space.formula(m): c for m, c in visits.items()}
    return ModelPosterior(probs, counts, method="rj",
                          acceptance_rate=accepted / proposed if proposed else None,
                          iterations=settings.iterations)
