"""Coefficient identification for a coupled wave system observed through one component."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
