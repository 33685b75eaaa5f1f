"""Dual-channel conditional message passing for knowledge graph reasoning."""

__version__ = "0.1.0"
