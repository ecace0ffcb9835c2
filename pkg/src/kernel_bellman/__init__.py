"""Kernel Bellman loss for value-function learning."""

__version__ = "0.1.0"
