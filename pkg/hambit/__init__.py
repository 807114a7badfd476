"""
Hambit - Simulation and verification toolkit for Hilbert-space-valued ambit fields
Computes one field by direct quadrature, truncated series and a finite difference
scheme, and checks the error bounds, isometries and characteristic functionals.
"""

__version__ = "1.0.0"
__author__ = "Hambit developers"
__description__ = "Hilbert-space ambit field simulation and verification toolkit"
