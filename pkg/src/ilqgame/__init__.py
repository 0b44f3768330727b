"""Iterative linear-quadratic solver for N-player general-sum differential games."""

from .cost import PlayerCost
from .dynamics import (
    Bicycle5D,
    DubinsConstantSpeed3D,
    MultiPlayerSystem,
    TimeDiscretization,
    Unicycle4D,
    integrate_step,
)
from .lqgame import AffineStrategy, solve_lq_game
from .solver import OperatingPoint, SolveResult, SolverConfig, ilq_solve

__version__ = "0.1.0"

__all__ = [
    "AffineStrategy",
    "Bicycle5D",
    "DubinsConstantSpeed3D",
    "MultiPlayerSystem",
    "OperatingPoint",
    "PlayerCost",
    "SolveResult",
    "SolverConfig",
    "TimeDiscretization",
    "Unicycle4D",
    "ilq_solve",
    "integrate_step",
    "solve_lq_game",
]
