"""Semantically controlled LSTM generator for dialogue-act realisation."""

__version__ = "0.1.0"
