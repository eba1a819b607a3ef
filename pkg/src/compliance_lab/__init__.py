"""Planar lab for adaptive force-impedance control with learned anomaly detection."""

from .backend import BACKEND_NAME

__version__ = "0.1.0"
__all__ = ["BACKEND_NAME", "__version__"]
