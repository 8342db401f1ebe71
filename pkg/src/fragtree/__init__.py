"""Random fragmentation trees: simulation, spectral analysis and limit-law checks."""

__version__ = "0.1.0"
