"""Numerical laboratory for the KPZ equation on the unit torus.

Modules
-------
field       torus grids, fields, spectral operators
noise       discretised white noise and the enhanced-noise trees
pde         backward linear PDE, Cole-Hopf and direct KPZ solvers, Hopf-Lax
control     path ensembles, variational identities, conditioned entropy
zvonkin     change of variables removing a rough drift
heatkernel  density estimation and Gaussian sandwich fits
experiments bound-verification harnesses
cli         command-line driver
"""

from .field import SpaceTimeField, TorusField, TorusGrid
from .noise import EnhancedNoise, InstabilityError, NoiseRealization, build_trees, sample_noise
from .pde import solve_kpz_cole_hopf, solve_kpz_direct

__version__ = "0.1.0"
