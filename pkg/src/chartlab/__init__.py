"""chartlab: compact CSI vector embeddings for positioning and channel charting."""

__version__ = "0.1.0"
