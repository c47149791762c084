"""Finite-difference harmonic map heat flow with Jacobi-spectrum diagnostics."""
from .errors import HeatflowError
from .geometry import TargetManifold
from .grid import DomainGrid
from .maps import DiscreteMap, Section, energy, tension, coordinate_tension, l2_inner, l2_norm

__all__ = [
    "HeatflowError", "TargetManifold", "DomainGrid", "DiscreteMap", "Section",
    "energy", "tension", "coordinate_tension", "l2_inner", "l2_norm",
]
__version__ = "0.1.0"
