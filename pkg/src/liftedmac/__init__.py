"""Iterative cancellation demodulation for random-waveform multiple access on lifted graphs."""
from __future__ import annotations

__version__ = "0.1.0"

from .config import CouplingSpec, SystemConfig
from .gkernel import g, g_fast, g_reference

__all__ = ["CouplingSpec", "SystemConfig", "g", "g_fast", "g_reference", "__version__"]
