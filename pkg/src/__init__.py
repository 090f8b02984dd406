"""
NLLC - Scalable near-lossless image compression with a bounded per-subpixel error
"""

__version__ = "0.1.0"
