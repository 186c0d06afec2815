"""Calibration attack, faked-states attack and key-rate analysis for BB84 with basis-dependent detector mismatch."""

from .core import EfficiencyCurve, RandomSource, TimingGrid, binary_entropy, curve_efficiency
from .fsa import FsaParameters

__all__ = [
    "EfficiencyCurve",
    "FsaParameters",
    "RandomSource",
    "TimingGrid",
    "binary_entropy",
    "curve_efficiency",
]
