"""Causal-weighted physics-informed neural network training engine."""

__version__ = "0.1.0"
