"""
pytrimlab - conditioning experiments for trimmed (immersed) finite element spaces.

This package provides the building blocks and drivers for measuring how small
trimmed elements spoil the conditioning of mass and stiffness matrices, and
how preconditioners recover it:
- Bases (spline_basis): B-splines of any continuity and Lagrange elements
- Geometry (trim_geometry): trimmed domains, element classification, cut quadrature
- Assembly (assembly): mass, stiffness and load over the active functions
- Preconditioners (preconditioners): Jacobi, SIPIC, additive Schwarz, deflation
- Solvers (krylov): PCG and deflated PCG with error histories
- Spectra (spectra): dense eigenvalues, condition numbers, slope fits
- Experiments (catalog, config, experiments): named geometries and CSV drivers

The CLI is available as:
- trimlab: sweep, spectrum, solve, project, wave and catalog subcommands
"""

__version__ = "1.0.0"

from . import assembly, catalog, krylov, preconditioners, spectra, spline_basis, trim_geometry
