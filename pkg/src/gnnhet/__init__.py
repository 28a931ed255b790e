"""Graph neural network estimation of network heterogeneity."""
__version__ = "0.1.0"
