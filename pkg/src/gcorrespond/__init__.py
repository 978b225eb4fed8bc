"""Bayesian log-linear and logistic models for contingency tables, linked by g-priors.

Submodules
----------
tables
    Factors, contingency tables, CSV/JSON ingest, collapse to binomial data, simulation.
models
    Hierarchical and graphical formulas, corner-point design matrices.
priors
    g-priors for Poisson and binomial GLMs, g laws, flat intercepts.
correspondence
    The beta = T lambda map and numerical checks of the implied logistic prior.
inference
    Likelihoods, adaptive Metropolis, posterior summaries, model selection.
cli
    The ``gcorrespond`` command.
"""

__version__ = "0.1.0"
