"""Electron-photon scattering with a multi-time wave function on a light-cone lattice."""

__version__ = "0.1.0"
