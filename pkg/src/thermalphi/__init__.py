"""Numerical laboratory for the thermal P(phi)_2 model on the cylinder S_beta x R.

Modules: lattice (grids, transforms, test functions), covariance (free kernels),
gaussian (free sampler), wick (Wick algebra), interaction (cutoff weights and
interacting ensembles), fock (circle Hamiltonian), heatprop (driven heat
propagators), schwinger (lattice against operator cross-checks), suites and cli.
"""
__version__ = "0.1.0"
