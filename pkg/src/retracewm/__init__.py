"""Latent state-space world model with cycle-consistent retrace training."""

__version__ = "0.1.0"
