"""
Halo analysis

Observables of the simulated ensemble, quadrant number statistics, Gaussian
fits and the closed-form estimates they are compared with.
"""

__version__ = "1.0.0"
