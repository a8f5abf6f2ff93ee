"""Rotation-equivariant convolutions with decomposed steerable filters."""

__version__ = "0.1.0"
