"""chanex: desk-scale channel extrapolation simulation and learning toolkit."""

__version__ = "0.1.0"
