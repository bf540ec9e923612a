"""sectionlab - numerical laboratory for Monge-Ampere sections and Harnack-type estimates"""

__version__ = "1.0.0"

# Package exports
__all__ = ["__version__"]
