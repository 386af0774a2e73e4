"""Worker and obstacle trajectory forecasting with graph-attention transformers."""

__version__ = "0.1.0"
