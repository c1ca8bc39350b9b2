"""Inertial-only maximum-a-posteriori initialization for monocular visual-inertial systems."""

__version__ = "0.1.0"
