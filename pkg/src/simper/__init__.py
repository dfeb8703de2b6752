"""Self-supervised periodic representation learning on small synthetic videos."""

__version__ = "0.1.0"
