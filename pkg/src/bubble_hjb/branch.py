"""Bifurcation branch of -nu u'' + eps (u')^2 + u = lam r u from the zero solution.

With a = lam r - 1 the problem is the solver's canonical one, so a branch is
just a sequence of :func:`~bubble_hjb.elliptic.solve_positive` calls.  The
branch leaves zero at the critical coupling lam_c, where the principal
eigenvalue of -nu d2/dx2 - lam r + 1 changes sign, and its sup norm grows
with lam.  Since u_{eps} = u_1 / eps, the branches for different eps are
scaled copies of one another.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .elliptic import EllipticProblem, solve_positive
from .errors import BracketError, BranchError, InvalidParameterError
from .grid import ScalarField, sup_norm
from .spectral import coupled_lambda1, critical_lambda, principal_eigenpair

logger = logging.getLogger(__name__)

# the positive solution must exist this far past lam_c
GATE_SLACK = 1e-6
NORM_TOL = 1e-8
MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class BranchPoint:
    eps: float
    lam: float
    sup_norm: float
    u: ScalarField = field(repr=False)


@dataclass
class BranchData:
    lambda_c: float
    points: dict
    r: ScalarField = field(repr=False)
    nu: float = 0.0

    def branch(self, eps: float) -> list:
        return self.points[eps]

    def rows(self) -> list:
        """``(eps, lambda, sup_norm)`` tuples, grouped by eps in insertion order."""
        return [(pt.eps, pt.lam, pt.sup_norm) for pts in self.points.values() for pt in pts]


def _check_profile(r: ScalarField) -> None:
    v = r.values
    if np.any(v < 0):
        raise InvalidParameterError("r must be >= 0")
    if np.ptp(v) == 0.0:
        raise InvalidParameterError("r must be nonconstant")
    if v.min() > 1e-12:
        raise InvalidParameterError("r must vanish somewhere")


def coupled_problem(nu: float, r: ScalarField, eps: float, lam: float) -> EllipticProblem:
    return EllipticProblem(nu, eps, ScalarField(r.grid, lam * r.values - 1.0))


def find_critical_lambda(nu: float, r: ScalarField, xtol: float = 1e-10) -> float:
    """lam_c, bracketed by doubling from lam = 1.

    At lam = 0 the eigenvalue is exactly 1, so only the upper end needs
    searching.
    """
    hi = 1.0
    for _ in range(MAX_DOUBLINGS):
        if coupled_lambda1(nu, r, hi) < 0:
            return critical_lambda(nu, r, (0.0, hi), xtol=xtol)
        hi *= 2.0
    raise BracketError("no sign change of lambda1 found; is r identically zero?")


def trace_branch(nu: float, r: ScalarField, eps_list: Sequence[float],
                 lambda_grid: Sequence[float], lambda_c: Optional[float] = None) -> BranchData:
    """Solve along ``lambda_grid`` (sorted ascending) for every eps.

    Each solve starts from the previous point's solution, which is a
    subsolution of the next problem because r >= 0.

    Raises:
        BranchError: if the solver finds only the zero solution well above
            lam_c, which means the root finder and the gate disagree.
    """
    _check_profile(r)
    if lambda_c is None:
        lambda_c = find_critical_lambda(nu, r)
    lams = sorted(float(v) for v in lambda_grid)
    zero = ScalarField(r.grid, 0.0)
    data = BranchData(lambda_c, {}, r, nu)
    for eps in eps_list:
        pts = []
        prev = None
        for lam in lams:
            if lam <= lambda_c:
                pts.append(BranchPoint(eps, lam, 0.0, zero))
                continue
            rep = solve_positive(coupled_problem(nu, r, eps, lam), start=prev)
            if not rep.regime.passes:
                if lam > lambda_c + GATE_SLACK:
                    raise BranchError(
                        f"solver reports {rep.regime.regime} at lambda={lam:.10g} "
                        f"> lambda_c={lambda_c:.10g}")
                pts.append(BranchPoint(eps, lam, 0.0, zero))
                continue
            prev = rep.u
            pts.append(BranchPoint(eps, lam, sup_norm(rep.u), rep.u))
        data.points[eps] = pts
        logger.info("branch eps=%g: %d points, sup norm up to %.4g", eps, len(pts),
                    max((p.sup_norm for p in pts), default=0.0))
    return data


def norm_matched_lambda(nu: float, r: ScalarField, eps: float, target_norm: float,
                        lambda_c: Optional[float] = None,
                        tol: float = NORM_TOL) -> tuple[float, ScalarField]:
    """The coupling at which the branch reaches sup norm ``target_norm``.

    Bisection on lam -> ||u_{eps,lam}||_inf, which is increasing, until the
    norm is within ``tol`` of the target.  Returns ``(lam, u)``.

    Raises:
        BracketError: if no coupling up to lam_c * 2**60 reaches the target.
    """
    if not target_norm > 0:
        raise InvalidParameterError("target_norm must be > 0")
    if not eps > 0:
        raise InvalidParameterError("eps must be > 0")
    _check_profile(r)
    if lambda_c is None:
        lambda_c = find_critical_lambda(nu, r)

    def solve(lam, start):
        u = solve_positive(coupled_problem(nu, r, eps, lam), start=start).u
        return u, sup_norm(u)

    lo, u_lo = lambda_c, None
    step = max(1.0, abs(lambda_c))
    hi = lambda_c + step
    u_hi, n_hi = solve(hi, None)
    for _ in range(MAX_DOUBLINGS):
        if n_hi >= target_norm:
            break
        lo, u_lo = hi, u_hi
        step *= 2.0
        hi = lambda_c + step
        u_hi, n_hi = solve(hi, u_lo)
    else:
        raise BracketError(f"sup norm {target_norm} not reached on the branch")
    if abs(n_hi - target_norm) <= tol:
        return hi, u_hi
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            # the bracket has collapsed to adjacent doubles
            return hi, u_hi
        u_mid, n_mid = solve(mid, u_lo)
        if abs(n_mid - target_norm) <= tol:
            return mid, u_mid
        if n_mid < target_norm:
            lo, u_lo = mid, u_mid
        else:
            hi, u_hi = mid, u_mid


def distance_to_eigenfunction(nu: float, r: ScalarField, lambda_c: float,
                              u: ScalarField) -> float:
    """||u - phi||_inf with phi the principal eigenfunction at lam_c, sup norm 1."""
    phi = principal_eigenpair(nu, None, ScalarField(r.grid, lambda_c * r.values - 1.0)).phi
    return sup_norm(u.values - phi.values)


def vanishing_point(points: Sequence[BranchPoint]) -> float:
    """First lambda at which the branch is nonzero (grid estimate of lam_c)."""
    for pt in points:
        if pt.sup_norm > 0:
            return pt.lam
    raise BranchError("branch never leaves zero on this lambda grid")


def extrapolated_vanishing_point(points: Sequence[BranchPoint]) -> float:
    """Where the line through the first two nonzero branch points meets zero.

    Near lam_c the sup norm grows linearly in lam - lam_c, so this recovers
    lam_c from branch data alone, independently of the eigenvalue solver.
    """
    live = [pt for pt in points if pt.sup_norm > 0]
    if len(live) < 2:
        raise BranchError("need two nonzero branch points to extrapolate")
    p, q = live[0], live[1]
    slope = (q.sup_norm - p.sup_norm) / (q.lam - p.lam)
    if not slope > 0:
        raise BranchError("branch is not increasing near its start")
    return p.lam - p.sup_norm / slope
