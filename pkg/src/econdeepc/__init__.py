"""Economic data-enabled predictive control with a learned output lifting."""

__version__ = "0.1.0"
