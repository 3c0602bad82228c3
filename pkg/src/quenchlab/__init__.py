"""Desk-scale laboratory comparing glassy Langevin dynamics with SGD training dynamics."""

__version__ = "0.1.0"
