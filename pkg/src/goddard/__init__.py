"""Minimum-fuel Goddard problem: indirect shooting with singular arcs, simplicial homotopies and a direct cross-check."""
from .errors import GoddardError
from .model import BoundaryConditions, ModelParams

__all__ = ["BoundaryConditions", "GoddardError", "ModelParams"]
__version__ = "0.1.0"
