"""Correctors and homogenized constants for oscillatory perturbed-lattice potentials."""
__version__ = "0.1.0"
