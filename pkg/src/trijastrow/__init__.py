"""Variational energy of a dilute Bose gas with a three-body hard core.

The trial state is a product of truncated three-body scattering solutions
over all triples.  Subpackages cover the modified metric, the scattering
solution and its integrals, the Jastrow state, Metropolis sampling and the
observables built from it.
"""
__version__ = "0.1.0"
