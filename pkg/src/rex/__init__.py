"""Algebraically reversible exponential Runge-Kutta solvers for diffusion models.

Submodules:

* :mod:`rex.schedules`: VP noise schedules, clocks and time grids.
* :mod:`rex.tableaux`: explicit and stochastic Butcher tableaux.
* :mod:`rex.brownian`: reproducible Brownian increments with Levy area.
* :mod:`rex.models`: analytic prediction models and flow oracles.
* :mod:`rex.solver`: the Psi step, the Rex wrapper, solve and invert.
* :mod:`rex.baselines`: closed-form samplers and earlier reversible solvers.
* :mod:`rex.stability`: linear stability criteria and iterations.
* :mod:`rex.harness`: experiment drivers used by the ``rex`` command.
"""

from .brownian import BrownianIncrement, BrownianPath, GridIncrements
from .models import GaussianDataModel, GaussianMixtureModel, exact_flow
from .schedules import NoiseSchedule, Parameterization, TimeGrid
from .solver import Dynamics, RexConfig, RexState, Trajectory, invert, psi_solve, solve
from .tableaux import ButcherTableau, ExtendedButcherTableau, builtin

__all__ = [
    "BrownianIncrement",
    "BrownianPath",
    "ButcherTableau",
    "Dynamics",
    "ExtendedButcherTableau",
    "GaussianDataModel",
    "GaussianMixtureModel",
    "GridIncrements",
    "NoiseSchedule",
    "Parameterization",
    "RexConfig",
    "RexState",
    "TimeGrid",
    "Trajectory",
    "builtin",
    "exact_flow",
    "invert",
    "psi_solve",
    "solve",
]
