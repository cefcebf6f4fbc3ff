"""Proxy-estimated decidability (d') training and separability audits for embedding models."""
from .errors import PDLossError

__version__ = "0.1.0"

__all__ = ["PDLossError", "__version__"]
