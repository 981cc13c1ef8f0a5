"""Learned per-particle hyper-parameter control for NBNC-PSO on dynamic problems."""

__version__ = "0.1.0"
