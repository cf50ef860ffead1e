"""Kinetic and macroscopic models of cell migration along tissue fibers."""

__version__ = "0.1.0"
