"""Principal eigenpair of L = -nu d2/dx2 - b d/dx - a with Neumann conditions.

The sign of the principal eigenvalue decides whether a positive price
exists, so everything downstream (the solver, the branch tracer, the
scenario threshold scans) goes through :func:`existence_gate` or
:func:`principal_eigenpair`.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .errors import BracketError, InvalidParameterError, IterationError
from .grid import Grid1D, ScalarField, constant

logger = logging.getLogger(__name__)

GATE_TOL = 1e-9


class Regime(str, enum.Enum):
    UNIQUE_POSITIVE = "UniquePositive"
    ZERO_ONLY = "ZeroOnly"
    DEGENERATE_NONNEGATIVE_A = "DegenerateNonnegativeA"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class EigenPair:
    lambda1: float
    phi: ScalarField
    residual: float
    iterations: int = 0


@dataclass(frozen=True)
class GateVerdict:
    regime: Regime
    lambda1: float
    min_a: float

    @property
    def passes(self) -> bool:
        return self.regime is Regime.UNIQUE_POSITIVE


def operator_bands(nu: float, b: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
    """Banded (1, 1) storage of the discrete operator, as used by ``solve_banded``.

    Row i reads ``ab[0, i+1] u[i+1] + ab[1, i] u[i] + ab[2, i-1] u[i-1]``.
    Boundary rows use the ghost reflection, and the drift drops out there
    because the discrete gradient vanishes on the boundary.
    """
    n = a.size
    d = nu / (h * h)
    ab = np.zeros((3, n))
    ab[1] = 2.0 * d - a
    ab[0, 2:] = -d - b[1:-1] / (2.0 * h)
    ab[2, :-2] = -d + b[1:-1] / (2.0 * h)
    ab[0, 1] = -2.0 * d
    ab[2, -2] = -2.0 * d
    return ab


def apply_bands(ab: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


def operator_matrix(nu: float, b: ScalarField, a: ScalarField) -> np.ndarray:
    """Dense copy of the discrete operator (for oracles and small problems)."""
    ab = operator_bands(nu, b.values, a.values, a.grid.h)
    n = a.grid.n
    m = np.diag(ab[1])
    m[np.arange(n - 1), np.arange(1, n)] = ab[0, 1:]
    m[np.arange(1, n), np.arange(n - 1)] = ab[2, :-1]
    return m


def principal_eigenpair(nu: float, b: Optional[ScalarField], a: ScalarField,
                        tol: float = 1e-12, max_iter: int = 200) -> EigenPair:
    """Principal eigenpair by shifted inverse iteration.

    The first solve uses the shift ``sigma = 4 nu/h^2 + sup|a| + sup|b|/h``,
    which makes ``L + sigma I`` an M-matrix, so the iterate is positive.  From
    then on the shift is the Collatz-Wielandt lower bound ``min (L v / v)``
    of the current positive iterate.  That bound never exceeds lambda1, so
    every resolvent stays positive and the iteration cannot lock onto a
    higher eigenvalue, while the shift approaches lambda1 and convergence
    becomes very fast.  The spread ``max - min`` of the ratios is a rigorous
    two-sided bracket on lambda1 and serves as the stopping test.

    Raises:
        IterationError: if the bracket does not close within ``max_iter``.
    """
    if nu <= 0:
        raise InvalidParameterError("nu must be > 0")
    grid = a.grid
    h = grid.h
    bv = np.zeros(grid.n) if b is None else np.asarray(b.values, dtype=float)
    if b is not None and b.grid != grid:
        raise InvalidParameterError("b and a must share a grid")
    av = a.values
    ab = operator_bands(nu, bv, av, h)
    sigma = 4.0 * nu / h**2 + np.max(np.abs(av)) + np.max(np.abs(bv)) / h
    # rounding floor on the Rayleigh-type ratios for this operator scale
    floor = 32.0 * np.finfo(float).eps * sigma
    shift = -sigma
    v = np.ones(grid.n)
    lo = hi = np.nan
    for it in range(1, max_iter + 1):
        shifted = ab.copy()
        shifted[1] -= shift
        w = solve_banded((1, 1), shifted, v, check_finite=False)
        w /= w[np.argmax(np.abs(w))]
        if np.any(w <= 0.0):
            raise IterationError(
                "inverse iteration lost positivity (cell Peclet number too large?)")
        v = w
        ratios = apply_bands(ab, v) / v
        lo, hi = float(ratios.min()), float(ratios.max())
        if hi - lo <= max(tol * (1.0 + abs(lo)), floor):
            break
        shift = lo - max(hi - lo, floor)
    else:
        raise IterationError(
            f"principal eigenpair did not converge in {max_iter} iterations",
            residual=hi - lo)
    phi = v / v.max()
    # weighted Rayleigh quotient: second-order accurate when b = 0, and the
    # bracket keeps it honest otherwise
    lv = apply_bands(ab, phi)
    wts = grid.weights
    lam = float(np.clip(np.dot(wts * phi, lv) / np.dot(wts * phi, phi), lo, hi))
    res = float(np.max(np.abs(lv - lam * phi)))
    logger.debug("lambda1=%.15g after %d iterations (bracket %.3g)", lam, it, hi - lo)
    return EigenPair(lam, ScalarField(grid, phi), res, it)


def classify(lambda1: float, min_a: float, gate_tol: float = GATE_TOL) -> Regime:
    if min_a >= 0.0:
        return Regime.DEGENERATE_NONNEGATIVE_A
    if lambda1 < -gate_tol:
        return Regime.UNIQUE_POSITIVE
    return Regime.ZERO_ONLY


def existence_gate(nu: float, a: ScalarField, b: Optional[ScalarField] = None,
                   gate_tol: float = GATE_TOL) -> GateVerdict:
    """Decide between a unique positive solution and the zero solution.

    ``b`` defaults to zero; when given, the drift-inclusive eigenvalue is
    used, which is the right gate for problems with a drift term.
    """
    pair = principal_eigenpair(nu, b, a)
    min_a = float(a.values.min())
    return GateVerdict(classify(pair.lambda1, min_a, gate_tol), pair.lambda1, min_a)


def coupled_lambda1(nu: float, r: ScalarField, lam: float) -> float:
    """lambda1(-nu d2/dx2 - lam r + 1)."""
    a = ScalarField(r.grid, lam * r.values - 1.0)
    return principal_eigenpair(nu, None, a).lambda1


def critical_lambda(nu: float, r: ScalarField, bracket: tuple[float, float],
                    xtol: float = 1e-10) -> float:
    """Root of lam -> lambda1(-nu d2/dx2 - lam r + 1) inside ``bracket``.

    For r >= 0 the map is nonincreasing in lam, so the root is unique.

    Raises:
        BracketError: when the eigenvalue does not change sign on the bracket.
    """
    lo, hi = bracket
    g_lo, g_hi = coupled_lambda1(nu, r, lo), coupled_lambda1(nu, r, hi)
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    if np.sign(g_lo) == np.sign(g_hi):
        raise BracketError(
            f"lambda1 has no sign change on [{lo}, {hi}]: {g_lo:.6g}, {g_hi:.6g}")
    return brentq(lambda t: coupled_lambda1(nu, r, t), lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def normalization_check(nu: float, r: ScalarField) -> float:
    """lambda1(-nu d2/dx2 - (r - 1)); the textbook normalization sets this to -1."""
    return coupled_lambda1(nu, r, 1.0)


def zero_drift(grid: Grid1D) -> ScalarField:
    return constant(grid, 0.0)
