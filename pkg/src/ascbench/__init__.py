"""Data-efficient, low-complexity acoustic scene classification toolkit."""

__version__ = "0.1.0"
