"""2D spectral-collocation discretization of the stochastic convection system.

Fourier collocation in the periodic x direction, second-order finite
differences on interior z levels with Dirichlet walls, streamfunction
biharmonic solves for the no-slip Stokes problem.
"""

from .grid import (
    Grid2D, ThetaField, VelocityField, ForcingSet, SpdeParams,
    forcing_basis, diagnostics, dimensionless_from_physical,
)
from .stokes import StokesOperator, stokes_solve
from .steppers import (
    step_theta_inf, step_boussinesq_eps, step_corrector_spde,
    step_linearized, step_controlled, step_damped, SpdeCorrector,
    spectral_ops,
)

__all__ = [
    "Grid2D", "ThetaField", "VelocityField", "ForcingSet", "SpdeParams",
    "forcing_basis", "diagnostics", "dimensionless_from_physical",
    "StokesOperator", "stokes_solve",
    "step_theta_inf", "step_boussinesq_eps", "step_corrector_spde",
    "step_linearized", "step_controlled", "step_damped", "SpdeCorrector",
    "spectral_ops",
]
