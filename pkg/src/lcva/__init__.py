"""Linked causal variational autoencoder for paired spillover effects, with
baselines, data tooling, metrics and a batch CLI."""

__version__ = "0.1.0"
