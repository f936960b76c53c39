"""Implicit Euler for u_t - nu u'' + eps (u')^2 - b u' = a u + f, Neumann in x.

Long-time integration from nonnegative data gives an independent check on
the stationary solver: when the existence gate passes the evolution settles
on the positive solution, otherwise it decays to zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .elliptic import EllipticProblem, newton_solve, solve_positive
from .errors import InnerSolveError, InvalidParameterError, StepError
from .grid import ScalarField, sup_norm

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-2
DEFAULT_TOL = 1e-8
MAX_HALVINGS = 10


@dataclass
class EvolutionReport:
    u_final: ScalarField
    times: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    sup_norms: list = field(default_factory=list)
    converged: bool = False
    dt: float = DEFAULT_DT
    steps: int = 0


def _step(p: EllipticProblem, u: np.ndarray, dt: float, depth: int) -> np.ndarray:
    try:
        w, _, _ = newton_solve(p, 1.0 / dt, u / dt + p.f.values, u)
        return w
    except InnerSolveError as exc:
        if depth >= MAX_HALVINGS:
            raise StepError(f"implicit step failed after {MAX_HALVINGS} halvings of dt",
                            residual=exc.residual) from exc
        logger.debug("halving dt=%.3g after Newton failure", dt)
        half = _step(p, u, 0.5 * dt, depth + 1)
        return _step(p, half, 0.5 * dt, depth + 1)


def step_implicit(p: EllipticProblem, u: ScalarField, dt: float) -> ScalarField:
    """One backward Euler step of size ``dt``.

    The implicit equation is the inner problem of the monotone scheme with
    kappa = 1/dt and right-hand side u/dt + f, so it reuses the same Newton
    solver.  If Newton fails, the step is split into two half steps, at most
    ten levels deep.
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be > 0")
    return ScalarField(p.grid, _step(p, np.asarray(u.values, dtype=float), dt, 0))


def evolve_to_steady(p: EllipticProblem, u0: ScalarField, dt: float = DEFAULT_DT,
                     t_max: float = 200.0, tol: float = DEFAULT_TOL,
                     reference: Optional[ScalarField] = None, auto_reference: bool = True,
                     record_every: int = 1) -> EvolutionReport:
    """Step until ||u^{k+1} - u^k||/dt <= tol or t >= t_max.

    Gaps are sup-norm distances to ``reference``; by default the reference is
    the stationary solution from :func:`solve_positive` (zero in the ZeroOnly
    regime).  Running out of time is not an error: the report just says
    ``converged=False``.
    """
    if np.any(u0.values < 0):
        raise InvalidParameterError("initial data must be >= 0")
    if reference is None and auto_reference:
        reference = solve_positive(p).u
    ref = None if reference is None else reference.values
    u = np.asarray(u0.values, dtype=float)
    rep = EvolutionReport(u0, dt=dt)

    def record(t, v):
        rep.times.append(t)
        rep.gaps.append(float("nan") if ref is None else sup_norm(v - ref))
        rep.sup_norms.append(sup_norm(v))

    record(0.0, u)
    n_steps = int(np.ceil(t_max / dt - 1e-9))
    k = 0
    for k in range(1, n_steps + 1):
        nxt = _step(p, u, dt, 0)
        rate = sup_norm(nxt - u) / dt
        u = nxt
        done = rate <= tol
        if k % record_every == 0 or done or k == n_steps:
            record(k * dt, u)
        if done:
            rep.converged = True
            break
    rep.steps = k
    rep.u_final = ScalarField(p.grid, u)
    return rep
