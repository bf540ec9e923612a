"""Core numerics for sectionlab: sections, normalization, sliding, barriers, covering"""

from .grid import Grid
from .normalization import AffineMap, ProblemInstance, john_normalize, rescale_problem
from .potentials import GridFunction, Potential, StructuralConstants, make_potential
from .sections import GeometryConstants, SectionSet, section

# Core exports
__all__ = [
    "AffineMap",
    "GeometryConstants",
    "Grid",
    "GridFunction",
    "Potential",
    "ProblemInstance",
    "SectionSet",
    "StructuralConstants",
    "john_normalize",
    "make_potential",
    "rescale_problem",
    "section",
]
