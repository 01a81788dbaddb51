"""Probabilistic neural architecture search with learned DAG generators."""

__version__ = "0.1.0"
