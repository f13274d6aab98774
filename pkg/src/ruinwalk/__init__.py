"""Simulation and verification of first-exceedance times for heavy-tailed walks
and regenerative / modulated processes."""
from __future__ import annotations

__version__ = "0.1.0"
