"""Adiabatic transport of neural-network quantum states for the TFIM.

Inverse power iteration on a variational manifold carries individual
eigenstates across a coupling sweep; exact free-fermion and diagonalization
oracles plus finite-size scaling analysis round out the toolkit.
"""

__version__ = "0.1.0"
