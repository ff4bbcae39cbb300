"""Discretized Glauber birth-and-death dynamics: K-transform operator core
and a continuum multiple birth-and-death chain."""

__version__ = "0.1.0"
