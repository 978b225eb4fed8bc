"""Likelihoods, within-model MCMC, posterior summaries and model selection."""
