"""Verification workbench for perfect dyadic multilinear singular forms.

Subpackages cover the dyadic lattice, exact test functions, finite-rank
forms with their axiom validators, path systems and testing-function
families, testing constants, stopping-time and telescoping machinery,
and the outer-measure framework on the cube tree.
"""

from .lattice import CubeSet, DyadicCube, Relation, children, maximal_cubes, parent, relate, unit_cube
from .funcspace import HolderTuple, NormValue, TestFunction

__all__ = [
    "CubeSet",
    "DyadicCube",
    "Relation",
    "children",
    "maximal_cubes",
    "parent",
    "relate",
    "unit_cube",
    "HolderTuple",
    "NormValue",
    "TestFunction",
]

__version__ = "0.1.0"
