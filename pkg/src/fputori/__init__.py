"""Construction and validation of elliptic invariant tori in FPU chains."""

__version__ = "0.1.0"
