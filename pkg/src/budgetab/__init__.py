"""Budget-constrained A/B experiment design for two-sided platforms."""

__version__ = "0.1.0"
