"""Ponzi-scheme detection for EVM contracts via runtime behavior graphs."""

__version__ = "0.1.0"
