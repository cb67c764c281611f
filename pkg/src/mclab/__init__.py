"""Monte Carlo and kinetic-PDE laboratory for mean-field correlation estimates."""
__version__ = "0.1.0"
