"""Monte Carlo Malliavin calculus on Poisson space via the lent particle method."""

__version__ = "0.1.0"
