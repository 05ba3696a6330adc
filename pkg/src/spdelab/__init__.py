"""spdelab: a desk-scale verification lab for stochastic parabolic equations.

Library layers:

* grids/fields/coefficients/weights - shared discrete model,
* brownian/scalar_sde - path sampling and scalar integrators,
* operators/solver - forward stochastic heat solver and its checks,
* carleman - weighted identity ledger and inequality functionals,
* backward - interpolation ratios, conditional-stability bounds, Tikhonov,
* inverse_source - source-to-flux experiments and uniqueness witnesses,
* config/experiments/cli - batch experiment harness.
"""

from .brownian import BrownianPath, sample_brownian
from .coefficients import CoefficientSet, check_ellipticity, compute_r1, constant
from .fields import ScalarField, h1_seminorm, l2_norm
from .grids import SpatialGrid, TimeGrid
from .operators import assemble_elliptic
from .scalar_sde import (
    ScalarTrajectory,
    integrate_linear_ode,
    ito_residual_scalar,
    toy_carleman_check,
)
from .solver import SpdeTrajectory, solve_forward, weak_residual
from .weights import CarlemanWeight, HolderExponent

__version__ = "0.1.0"

__all__ = [
    "BrownianPath",
    "CarlemanWeight",
    "CoefficientSet",
    "HolderExponent",
    "ScalarField",
    "ScalarTrajectory",
    "SpatialGrid",
    "SpdeTrajectory",
    "TimeGrid",
    "__version__",
    "assemble_elliptic",
    "check_ellipticity",
    "compute_r1",
    "constant",
    "h1_seminorm",
    "integrate_linear_ode",
    "ito_residual_scalar",
    "l2_norm",
    "sample_brownian",
    "solve_forward",
    "toy_carleman_check",
    "weak_residual",
]
