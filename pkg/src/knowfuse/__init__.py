"""Knowledge-graph-infused multimodal classifier on precomputed embeddings."""

__version__ = "0.1.0"
