"""Bounds and estimation for Doppler-aided single-antenna localization and mapping."""

from .channel import RadioConfig, make_pilots
from .fim import BoundsReport, compute_approx_bounds, compute_bounds
from .geometry import KNOWN_VELOCITY, MOBILE, STATIONARY, Scenario

__all__ = [
    "RadioConfig",
    "make_pilots",
    "BoundsReport",
    "compute_bounds",
    "compute_approx_bounds",
    "Scenario",
    "MOBILE",
    "STATIONARY",
    "KNOWN_VELOCITY",
]
__version__ = "0.1.0"
