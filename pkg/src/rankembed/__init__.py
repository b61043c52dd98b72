"""Word embeddings from a corruption-ranking network, and a window tagger that uses them."""

__version__ = "0.1.0"
