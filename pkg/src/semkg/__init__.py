"""Knowledge-graph completion with joint text-semantic and structure embeddings."""

__version__ = "0.1.0"
