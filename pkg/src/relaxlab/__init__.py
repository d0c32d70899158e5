"""Numerical laboratory for the diffusive relaxation limit of damped compressible Euler flow."""
from .model import PhysParams, damping_b, validate_params
from .spectral import DyadicLadder, Grid, SpectralField
from .solvers import DtPolicy, EulerState, PMState, build_initial_data, run_euler, run_porous_medium

__version__ = "0.1.0"

__all__ = ["PhysParams", "damping_b", "validate_params", "DyadicLadder", "Grid", "SpectralField", "DtPolicy",
           "EulerState", "PMState", "build_initial_data", "run_euler", "run_porous_medium", "__version__"]
