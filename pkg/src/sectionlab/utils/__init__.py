"""Utility functions for sectionlab"""

from .errors import BoundaryStencilWarning, SectionLabError
from .logging import configure_logging, get_logger
from .numerics import PowerFit, bracket_and_bisect, loglog_fit, lp_norm

# Utility exports
__all__ = [
    "BoundaryStencilWarning",
    "PowerFit",
    "SectionLabError",
    "bracket_and_bisect",
    "configure_logging",
    "get_logger",
    "loglog_fit",
    "lp_norm",
]
