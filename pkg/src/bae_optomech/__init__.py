"""Two-mode back-action-evading measurement of a pair of mechanical oscillators."""

__version__ = "0.1.0"
