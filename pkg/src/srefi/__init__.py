"""Synthetic face images from recombined, reshaped and blended donor face regions."""
from .errors import CapacityError, SrefiError, ValidationError

__version__ = "0.1.0"

__all__ = ["CapacityError", "SrefiError", "ValidationError", "__version__"]
