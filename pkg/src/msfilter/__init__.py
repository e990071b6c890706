"""msfilter - Bayesian filtering with rational density surrogates fitted to power moments."""

__version__ = "0.1.0"
