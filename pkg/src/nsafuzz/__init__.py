"""Formal-guided fuzzing lab for an abstracted 5G NSA authentication flow."""

__version__ = "0.1.0"
