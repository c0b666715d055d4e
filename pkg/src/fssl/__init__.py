"""Federated self-supervised representation learning for acoustic event classification."""

__version__ = "0.1.0"
