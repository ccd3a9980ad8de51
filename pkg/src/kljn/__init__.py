"""Simulator and analysis toolkit for Kirchhoff-law Johnson-noise key exchange."""

__version__ = "0.1.0"
