"""Finite-element data generation, operator networks (VarMiON, DeepONet, MIONet) and error diagnostics."""

__version__ = "0.1.0"
