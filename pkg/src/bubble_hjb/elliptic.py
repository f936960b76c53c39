"""Positive solution of -nu u'' + eps (u')^2 - b u' = a u + f with u'(0) = u'(1) = 0.

The solver is the constructive monotone scheme: starting from a positive
subsolution u_0, each outer step solves

    -nu w'' + eps (w')^2 - b w' + (kappa - a) w = kappa u_n + f

for w = u_{n+1}.  With kappa > max(a, 0) the map u_n -> u_{n+1} is order
preserving, so the iterates increase to the unique positive solution.  Each
outer step is a small semilinear problem, solved by damped Newton with a
tridiagonal Jacobian.

Close to the existence threshold (lambda1 just below 0) the outer iteration
gains only about |lambda1|/kappa per step.  If a chunk of outer steps does
not settle, the solver tries a Newton finish on the stationary equation,
started from the current iterate rescaled to the amplitude that balances
the equation against the principal eigenfunction.  The result is accepted
only if it is a solution lying above the current subsolution, which by
uniqueness makes it the positive solution; otherwise the outer iteration
resumes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import (GateViolationError, InnerSolveError, InvalidParameterError,
                     SchemeFailureError)
from .grid import (Grid1D, ScalarField, constant, gradient_values, laplacian_values,
                   sup_norm)
from .spectral import (EigenPair, GateVerdict, Regime, classify, operator_bands,
                       principal_eigenpair)

logger = logging.getLogger(__name__)

OUTER_TOL = 1e-10
INNER_TOL = 1e-12
MONOTONE_TOL = 1e-12
# outer steps between attempts at a Newton finish
OUTER_CHUNK = 2000
SUBSOLUTION_SAFETY = 0.9
DEGENERATE_SLOPE = 1e-14


@dataclass(frozen=True)
class EllipticProblem:
    """Coefficients of -nu u'' + eps (u')^2 - b u' = a u + f on ``grid``."""

    nu: float
    eps: float
    a: ScalarField
    b: ScalarField = None
    f: ScalarField = None

    def __post_init__(self):
        if not self.nu > 0:
            raise InvalidParameterError("nu must be > 0")
        if not self.eps > 0:
            raise InvalidParameterError("eps must be > 0")
        grid = self.a.grid
        if self.b is None:
            object.__setattr__(self, "b", constant(grid, 0.0))
        if self.f is None:
            object.__setattr__(self, "f", constant(grid, 0.0))
        if self.b.grid != grid or self.f.grid != grid:
            raise InvalidParameterError("a, b and f must live on the same grid")
        if np.any(self.f.values < 0):
            raise InvalidParameterError("source f must be >= 0")

    @property
    def grid(self) -> Grid1D:
        return self.a.grid

    @cached_property
    def operator_scale(self) -> float:
        """Bound on the row sums of the linear operator's absolute entries."""
        h = self.grid.h
        return (4.0 * self.nu / h**2 + float(np.max(np.abs(self.a.values)))
                + float(np.max(np.abs(self.b.values))) / h)

    @property
    def has_source(self) -> bool:
        return bool(np.any(self.f.values > 0))

    def replace(self, **changes) -> "EllipticProblem":
        kw = dict(nu=self.nu, eps=self.eps, a=self.a, b=self.b, f=self.f)
        kw.update(changes)
        return EllipticProblem(**kw)


@dataclass
class SolveReport:
    u: ScalarField
    regime: GateVerdict
    outer_iterations: int
    final_residual: float
    monotone_violation: float
    # set when the gate fails but a source term still gives a nonzero limit
    flagged: bool = False
    # set when the outer iteration was cut short by a Newton finish
    newton_finish: bool = False
    eigenpair: Optional[EigenPair] = field(default=None, repr=False)


# -- residual evaluation --------------------------------------------------------

def residual_values(p: EllipticProblem, u: np.ndarray) -> np.ndarray:
    h = p.grid.h
    g = gradient_values(u, h)
    return (-p.nu * laplacian_values(u, h) + p.eps * g * g - p.b.values * g
            - p.a.values * u - p.f.values)


def residual(p: EllipticProblem, u: ScalarField) -> float:
    """Sup norm of the discrete equation's residual at ``u``."""
    return sup_norm(residual_values(p, u.values))


def rounding_floor(p: EllipticProblem, scale: float) -> float:
    """Smallest residual resolvable in double precision at solution size ``scale``.

    The second difference multiplies O(eps_mach * |u|) cancellation errors by
    nu/h^2, which dominates at fine grids.
    """
    return np.finfo(float).eps * p.operator_scale * scale


# -- subsolution -----------------------------------------------------------------

def build_subsolution(pair: EigenPair, lam: float, eps: float) -> ScalarField:
    """Positive multiple of the principal eigenfunction that is a subsolution.

    With lam = -lambda1 > 0 the scaled field u_0 = alpha*phi satisfies
    eps |u_0'|^2 <= lam u_0 at every node, which makes it a discrete
    subsolution of the f = 0 problem.
    """
    if not lam > 0:
        raise GateViolationError(f"subsolution needs lambda1 < 0, got lambda1 = {-lam}")
    phi = pair.phi.values
    g = gradient_values(phi, pair.phi.grid.h)
    g2 = g * g
    mask = np.abs(g) > DEGENERATE_SLOPE
    alpha = 1.0
    if np.any(mask):
        alpha = min(1.0, SUBSOLUTION_SAFETY * float(np.min(lam * phi[mask] / (eps * g2[mask]))))
    return ScalarField(pair.phi.grid, alpha * phi)


# -- inner Newton solve ----------------------------------------------------------

def _inner_residual(p, kappa, rhs, w):
    h = p.grid.h
    g = gradient_values(w, h)
    res = -p.nu * laplacian_values(w, h) + p.eps * g * g - p.b.values * g + (kappa - p.a.values) * w - rhs
    return res, g


def newton_solve(p: EllipticProblem, kappa: float, rhs: np.ndarray, init: np.ndarray,
                 tol: Optional[float] = None, max_iter: int = 100,
                 max_halvings: int = 20) -> tuple[np.ndarray, float, int]:
    """Damped Newton for -nu w'' + eps (w')^2 - b w' + (kappa - a) w = rhs.

    Returns ``(w, residual, iterations)`` on raw arrays.  The Jacobian is the
    linear operator with effective drift ``b - 2 eps w'``, so it shares the
    tridiagonal assembly with the eigen solver.
    """
    h = p.grid.h
    if tol is None:
        # relative, so that the tiny fields near the existence threshold are
        # resolved as well as large ones (the f = 0 equation is scale covariant)
        tol = INNER_TOL * sup_norm(rhs)
    w = np.array(init, dtype=float)
    res, g = _inner_residual(p, kappa, rhs, w)
    rnorm = sup_norm(res)
    shifted_a = p.a.values - kappa
    for it in range(max_iter):
        # the smallest normal double keeps decaying fields out of subnormals
        floor = rounding_floor(p, sup_norm(w)) + np.finfo(float).tiny
        if rnorm <= max(tol, floor):
            return w, rnorm, it
        jac = operator_bands(p.nu, p.b.values - 2.0 * p.eps * g, shifted_a, h)
        step = solve_banded((1, 1), jac, res, check_finite=False)
        t = 1.0
        for _ in range(max_halvings + 1):
            trial = w - t * step
            tres, tg = _inner_residual(p, kappa, rhs, trial)
            tnorm = sup_norm(tres)
            if np.isfinite(tnorm) and tnorm < rnorm:
                break
            t *= 0.5
        else:
            if rnorm <= 16.0 * max(tol, floor):
                # stagnated at the rounding level
                return w, rnorm, it
            raise InnerSolveError(
                f"Newton stagnated after {max_halvings} halvings "
                f"(residual {rnorm:.3e}, kappa {kappa:.3g})", residual=rnorm)
        w, res, g, rnorm = trial, tres, tg, tnorm
    raise InnerSolveError(f"Newton did not converge in {max_iter} iterations", residual=rnorm)


def inner_semilinear_solve(p: EllipticProblem, kappa: float, rhs: ScalarField,
                           init: ScalarField) -> ScalarField:
    """One outer step of the monotone scheme (see module docstring)."""
    if not kappa > float(np.max(p.a.values)):
        raise InvalidParameterError("kappa must exceed max a")
    w, _, _ = newton_solve(p, kappa, rhs.values, init.values)
    return ScalarField(p.grid, w)


def polish(p: EllipticProblem, u: np.ndarray, max_iter: int = 8) -> np.ndarray:
    """A few full Newton steps on the stationary equation.

    Used after the monotone iteration has converged, only to bring the
    residual down to the rounding level.  A step is kept only if it lowers
    the residual.
    """
    h = p.grid.h
    best = u
    best_r = sup_norm(residual_values(p, u))
    for _ in range(max_iter):
        g = gradient_values(best, h)
        jac = operator_bands(p.nu, p.b.values - 2.0 * p.eps * g, p.a.values, h)
        try:
            step = solve_banded((1, 1), jac, residual_values(p, best), check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            break
        trial = best - step
        r = sup_norm(residual_values(p, trial))
        if not r < best_r:
            break
        best, best_r = trial, r
    return best


# -- outer monotone iteration --------------------------------------------------------

@dataclass
class IterationTrace:
    u: np.ndarray
    iterations: int
    violation: float
    converged: bool


def default_kappa(p: EllipticProblem) -> float:
    return max(float(np.max(p.a.values)), 0.0) + 1.0


def monotone_iterate(p: EllipticProblem, start: np.ndarray, kappa: Optional[float] = None,
                     tol: float = OUTER_TOL, max_outer: int = 50_000,
                     increasing: bool = True) -> IterationTrace:
    """Run u_{n+1} = T(u_n) until the relative sup-norm Cauchy test passes.

    ``violation`` records the largest step against the expected direction
    (decrease when ``increasing``, increase otherwise).
    """
    kappa = default_kappa(p) if kappa is None else kappa
    u = np.array(start, dtype=float)
    f = p.f.values
    violation = 0.0
    for n in range(1, max_outer + 1):
        nxt, _, _ = newton_solve(p, kappa, kappa * u + f, u)
        step = nxt - u
        worst = -step.min() if increasing else step.max()
        violation = max(violation, worst, 0.0)
        u = nxt
        # relative to |u| rather than 1 + |u|, so tiny solutions near the
        # existence threshold are not declared converged after one small step
        if sup_norm(step) <= tol * sup_norm(u):
            return IterationTrace(u, n, violation, True)
    return IterationTrace(u, max_outer, violation, False)


def _balanced_amplitude(p: EllipticProblem, phi: np.ndarray, u: np.ndarray) -> float:
    """Scale s >= 1 at which s*u balances the equation tested against phi.

    The residual of s*u is s L u + s^2 eps (u')^2 - f with L the linear part,
    so its trapezoid-weighted moment against phi is a quadratic in s.
    """
    h = p.grid.h
    g = gradient_values(u, h)
    wphi = p.grid.weights * phi
    lin = float(np.dot(wphi, -p.nu * laplacian_values(u, h) - p.b.values * g - p.a.values * u))
    quad = p.eps * float(np.dot(wphi, g * g))
    src = float(np.dot(wphi, p.f.values))
    if not quad > 0:
        return 1.0
    s = (-lin + np.sqrt(max(lin * lin + 4.0 * quad * src, 0.0))) / (2.0 * quad)
    return max(float(s), 1.0)


def _newton_finish(p: EllipticProblem, phi: np.ndarray, below: np.ndarray) -> Optional[np.ndarray]:
    """Newton on the stationary equation from the rescaled subsolution ``below``.

    Returns the solution if Newton converges to a field that lies above
    ``below`` (up to rounding), else None.
    """
    if sup_norm(below) == 0.0:
        return None
    start = _balanced_amplitude(p, phi, below) * below
    try:
        w, _, _ = newton_solve(p, 0.0, p.f.values, start, tol=OUTER_TOL * INNER_TOL)
    except InnerSolveError:
        return None
    if np.min(w - below) < -MONOTONE_TOL * (1.0 + sup_norm(w)):
        return None
    return w


def solve_positive(p: EllipticProblem, start: Optional[ScalarField] = None,
                   tol: float = OUTER_TOL, max_outer: int = 50_000) -> SolveReport:
    """Unique positive solution, or zero when the existence gate fails.

    Args:
        p: the problem.
        start: optional discrete subsolution to start from (for example the
            solution at a smaller coupling on a branch).  It must lie below
            the solution, otherwise the monotone check fails.
        tol: relative sup-norm Cauchy tolerance of the outer iteration.
        max_outer: budget of outer steps.  Every ``OUTER_CHUNK`` steps
            without settling, a Newton finish is attempted (see the module
            docstring).

    Raises:
        SchemeFailureError: if the iterates decrease beyond rounding, or the
            outer iteration does not settle within ``max_outer`` steps.
    """
    grid = p.grid
    pair = principal_eigenpair(p.nu, p.b, p.a)
    verdict = GateVerdict(classify(pair.lambda1, float(p.a.values.min())),
                          pair.lambda1, float(p.a.values.min()))
    zero = np.zeros(grid.n)

    if not verdict.passes and not p.has_source:
        return SolveReport(ScalarField(grid, zero), verdict, 0, residual(p, constant(grid, 0.0)),
                           0.0, eigenpair=pair)

    if start is not None:
        u0 = np.asarray(start.values, dtype=float)
    elif verdict.passes and not p.has_source:
        u0 = build_subsolution(pair, -pair.lambda1, p.eps).values
    else:
        u0 = zero

    u, done, violation, finished = u0, 0, 0.0, False
    while True:
        chunk = min(OUTER_CHUNK, max_outer - done)
        trace = monotone_iterate(p, u, tol=tol, max_outer=chunk)
        u, done = trace.u, done + trace.iterations
        violation = max(violation, trace.violation)
        if trace.converged:
            break
        w = _newton_finish(p, pair.phi.values, u)
        if w is not None:
            logger.debug("Newton finish after %d outer steps", done)
            u, finished = w, True
            break
        if done >= max_outer:
            raise SchemeFailureError(
                f"monotone iteration did not settle in {max_outer} outer steps",
                residual=residual(p, ScalarField(grid, u)))
    limit = MONOTONE_TOL * (1.0 + sup_norm(u))
    if violation > limit:
        raise SchemeFailureError(
            f"outer iterates decreased by {violation:.3e} (> {limit:.1e})", residual=violation)
    u = polish(p, u)
    field_u = ScalarField(grid, u)
    report = SolveReport(field_u, verdict, done, residual(p, field_u), violation,
                         flagged=not verdict.passes, newton_finish=finished, eigenpair=pair)
    logger.debug("solve_positive: %d outer steps, residual %.3e, regime %s",
                 done, report.final_residual, verdict.regime)
    return report


def rescale_quadratic(u: ScalarField, eps_from: float, eps_to: float) -> ScalarField:
    """Map the f = 0 solution at ``eps_from`` to the one at ``eps_to``.

    The equation is one-homogeneous under u -> (eps_from/eps_to) u, on the
    grid as well as in the continuum.
    """
    if not (eps_from > 0 and eps_to > 0):
        raise InvalidParameterError("quadratic coefficients must be > 0")
    if eps_from == eps_to:
        return u
    return ScalarField(u.grid, u.values * (eps_from / eps_to))
