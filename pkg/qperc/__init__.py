"""Classical and concurrence percolation on weighted networks."""

__version__ = "0.1.0"
