"""Streaming concept-drift detection from confusion-matrix rates."""

__version__ = "0.1.0"
