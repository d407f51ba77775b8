"""Laplace posteriors for contrastive metric learning on the unit sphere."""

__version__ = "0.1.0"
