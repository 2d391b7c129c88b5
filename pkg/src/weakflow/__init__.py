"""Mesh-free weak-form physics-informed solver for steady incompressible flow."""

__version__ = "0.1.0"
