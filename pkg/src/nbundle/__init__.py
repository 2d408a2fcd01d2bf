"""Simulation and analysis of cavity-QED N-photon bundle emitters."""

__version__ = "0.1.0"
