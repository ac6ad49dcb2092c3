"""Error-correcting neural networks for mean curvature on adaptive level-set grids."""
__version__ = "0.1.0"
