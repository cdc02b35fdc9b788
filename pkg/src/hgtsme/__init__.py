"""Bayesian hierarchical spatial models for multi-type areal survey data with
error-prone covariates, fitted by a collapsed Gibbs sampler."""

__version__ = "0.1.0"
