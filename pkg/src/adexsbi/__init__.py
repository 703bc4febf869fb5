"""Amortized simulation-based inference of AdEx neuron parameter codes."""

__version__ = "0.1.0"
