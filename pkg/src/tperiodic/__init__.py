"""Parallel-in-time fixed-point solver for nonlinear time-periodic parabolic problems."""

__version__ = "0.1.0"
