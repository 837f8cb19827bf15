"""Encoder sidecar for the adversarial-suffix toolkit."""

__version__ = "0.1.0"

from .model import EncoderBackend, ServiceConfig

__all__ = ["EncoderBackend", "ServiceConfig", "__version__"]
