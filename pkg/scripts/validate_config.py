#!/usr/bin/env python3
"""
Validate a sectionlab experiment configuration before running it
"""

from sectionlab.validation import ConfigValidator, main

__all__ = ["ConfigValidator", "main"]

if __name__ == "__main__":
    main()
