"""
Positive-P collision simulator

Lattice, ground state, stochastic field integration, ensemble accumulation
and checkpoints.
"""

__version__ = "1.0.0"
