"""Catalytic branching Brownian motion: exact simulation and verification."""

__version__ = "0.1.0"

from .engine import (  # noqa: F401
    PopulationCapExceeded,
    SimConfig,
    Snapshot,
    additive_martingale,
    count_above,
    rightmost,
    simulate,
    simulate_discretized,
)
from .randkit import RngStream  # noqa: F401
