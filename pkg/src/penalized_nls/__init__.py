"""Penalized semiclassical nonlinear Schroedinger equation: solver and checks.

Solves -eps^2 Lap u + V u = K u^p for radial, fast-decaying potentials by a
penalization of the nonlinearity outside a region Lambda, then verifies the
computed solutions against energy, decay and concentration predictions.
"""

from .problem import DomainLambda, Potential, ProblemSpec
from .penalization import PenalizationParams, select_params
from .grids import RadialField, RadialGrid, build_grid
from .groundstate import GroundState, solve_canonical
from .solver import SolveReport, solve_least_energy
from .config import RunConfig, plateau_config

__all__ = ["DomainLambda", "Potential", "ProblemSpec", "PenalizationParams", "select_params",
           "RadialField", "RadialGrid", "build_grid", "GroundState", "solve_canonical",
           "SolveReport", "solve_least_energy", "RunConfig", "plateau_config"]
__version__ = "0.1.0"
