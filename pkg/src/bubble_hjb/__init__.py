"""Positive solutions of -nu u'' + eps (u')^2 - b u' = a u + f on [0, 1], u' = 0 at both ends.

The package decides existence from the principal eigenvalue of
-nu d2/dx2 - b d/dx - a, computes the positive solution by a monotone
iteration, and cross-checks it against a parabolic long-time limit and a
Monte Carlo evaluation of the associated control problem.
"""

from .elliptic import EllipticProblem, SolveReport, residual, solve_positive
from .errors import BubbleError
from .grid import Grid1D, ScalarField, constant, field_from, make_grid
from .spectral import GateVerdict, Regime, existence_gate, principal_eigenpair

__all__ = [
    "BubbleError",
    "EllipticProblem",
    "GateVerdict",
    "Grid1D",
    "Regime",
    "ScalarField",
    "SolveReport",
    "constant",
    "existence_gate",
    "field_from",
    "make_grid",
    "principal_eigenpair",
    "residual",
    "solve_positive",
]

__version__ = "0.1.0"
