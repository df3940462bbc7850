"""bg2phs: compile multi-bond graphs into explicit port-Hamiltonian models."""

__version__ = "0.1.0"
