"""Second-order rate regions of constant-composition codes for the two-user MAC."""

__version__ = "0.1.0"
