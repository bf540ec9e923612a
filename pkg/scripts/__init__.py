"""
Stand-alone helper scripts for sectionlab
"""

__version__ = "1.0.0"
