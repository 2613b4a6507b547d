"""Asynchronous event-graph neural network inference engine."""

__version__ = "0.1.0"
