"""GAMP, exact EP and R-transform (S-AMP) inference for generalized linear models."""

__version__ = "0.1.0"
