"""Scalable Gaussian-process simulation: parent GP, NNGP/RNGP, PCGP and mPCGP."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
