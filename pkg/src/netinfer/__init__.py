"""Design-based inference for bipartite experiments with interference."""

__version__ = "0.1.0"
