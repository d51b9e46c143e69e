"""Rating and aspect-opinion knowledge-graph embeddings for explainable recommendation."""

__version__ = "0.1.0"
