"""Economic front end: asset-price problems and the allocations they imply.

Two market models lead to the same equation -nu u'' + eps (u')^2 = (r1 - r0) u + f:

* a crypto asset held by N agents with CARA utility (coefficient c), with
  eps = 2 c K nu / N and no dividend;
* real estate held by CRRA investors (risk parameter gamma) with fixed total
  wealth Q, eps = gamma K sigma^2 / Q, and rent f >= 0.

Throughout, the state volatility enters only through nu = sigma^2 / 2.

Given a solved price u, the optimal holdings follow from a Merton-type ratio
of excess return to squared price volatility.  That ratio degenerates where
u' = 0 (always at the two boundary nodes), and such nodes are reported as
undefined rather than as infinities.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import bisect

from .elliptic import EllipticProblem, SolveReport
from .errors import NoBubbleError, ScenarioConfigError
from .grid import Grid1D, ScalarField, gradient_values, laplacian_values
from .spectral import Regime, classify, principal_eigenpair

UNDEFINED = "undefined"
# relative size of |u'| below which the allocation formula is not evaluated
DEGENERATE_SLOPE = 1e-9
# Clearing is measured on a fixed interior window, and only where |u'| is at
# least a fraction of its maximum.  Near the boundary u' -> 0 and the division
# by |u'|^2 amplifies the truncation error without bound; a fixed window keeps
# the set of sampled points the same under grid refinement.
CLEARING_WINDOW = (0.1, 0.9)
WELL_CONDITIONED = 0.05
THRESHOLD_XTOL = 1e-8


def affine(grid: Grid1D, p: float, q: float) -> ScalarField:
    """r0(x) = p + q x, a nonincreasing fiat return (q <= 0)."""
    if q > 0:
        raise ScenarioConfigError("r0", f"affine slope must be <= 0, got {q}")
    return ScalarField(grid, p + q * grid.nodes)


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ScenarioConfigError(name, f"{name} must be > 0, got {value}")


@dataclass(frozen=True)
class CryptoScenario:
    nu: float
    c: float
    K_asset: float
    N_agents: float
    r1: float
    r0: ScalarField = field(repr=False)

    def __post_init__(self):
        for name in ("nu", "c", "K_asset", "N_agents"):
            _positive(name, getattr(self, name))
        if np.any(np.diff(self.r0.values) > 0):
            raise ScenarioConfigError("r0", "r0 must be nonincreasing in x")

    @property
    def eps(self) -> float:
        return 2.0 * self.c * self.K_asset * self.nu / self.N_agents

    @property
    def grid(self) -> Grid1D:
        return self.r0.grid

    @property
    def source(self) -> ScalarField:
        return ScalarField(self.grid, 0.0)

    def with_updates(self, **kw) -> "CryptoScenario":
        d = dict(nu=self.nu, c=self.c, K_asset=self.K_asset, N_agents=self.N_agents,
                 r1=self.r1, r0=self.r0)
        d.update(kw)
        return CryptoScenario(**d)


@dataclass(frozen=True)
class RealEstateScenario:
    nu: float
    gamma: float
    K_asset: float
    Q_wealth: float
    r1: float
    r0: ScalarField = field(repr=False)
    f: Optional[ScalarField] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("nu", "gamma", "K_asset", "Q_wealth"):
            _positive(name, getattr(self, name))
        if self.f is None:
            object.__setattr__(self, "f", ScalarField(self.r0.grid, 0.0))
        if self.f.grid != self.r0.grid:
            raise ScenarioConfigError("f", "rent and r0 must share a grid")
        if np.any(self.f.values < 0):
            raise ScenarioConfigError("f", "rent f must be >= 0")

    @property
    def sigma_sq_over_2(self) -> float:
        return self.nu

    @property
    def eps(self) -> float:
        return self.gamma * self.K_asset * (2.0 * self.nu) / self.Q_wealth

    @property
    def grid(self) -> Grid1D:
        return self.r0.grid

    @property
    def source(self) -> ScalarField:
        return self.f

    def with_updates(self, **kw) -> "RealEstateScenario":
        d = dict(nu=self.nu, gamma=self.gamma, K_asset=self.K_asset, Q_wealth=self.Q_wealth,
                 r1=self.r1, r0=self.r0, f=self.f)
        d.update(kw)
        return RealEstateScenario(**d)


Scenario = Union[CryptoScenario, RealEstateScenario]


def excess_return(scn: Scenario) -> ScalarField:
    """a = r1 - r0."""
    return ScalarField(scn.grid, scn.r1 - scn.r0.values)


def build_problem(scn: Scenario) -> EllipticProblem:
    return EllipticProblem(scn.nu, scn.eps, excess_return(scn), f=scn.source)


# -- allocations -------------------------------------------------------------------

@dataclass(frozen=True)
class AllocationProfile:
    """Optimal holdings on the grid.

    ``theta`` is the CRRA fraction of wealth (``kind == "CRRA"``) or the CARA
    holding per unit of wealth at q = 1 (``kind == "CARA"``); ``demand`` is
    the aggregate demand in asset units, to be compared with the supply K.
    Both arrays hold NaN at the nodes listed as undefined in ``defined``.
    """

    kind: str
    x: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    demand: np.ndarray = field(repr=False)
    defined: np.ndarray = field(repr=False)
    clearing_error: float = 0.0

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "u", "theta_star", "demand"])
        for xi, ui, ti, di, ok in zip(self.x, self.u, self.theta, self.demand, self.defined):
            w.writerow([f"{xi:.17g}", f"{ui:.17g}",
                        f"{ti:.17g}" if ok else UNDEFINED, f"{di:.17g}" if ok else UNDEFINED])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _risk_scale(scn: Scenario) -> tuple[str, float, float]:
    """(kind, risk parameter times sigma^2, number of demand units per holding)."""
    sigma_sq = 2.0 * scn.nu
    if isinstance(scn, CryptoScenario):
        return "CARA", scn.c * sigma_sq, scn.N_agents
    return "CRRA", scn.gamma * sigma_sq, scn.Q_wealth


def _excess_drift(scn: Scenario, u, du, d2u, a, f):
    # expected excess return of one unit of the asset, in price units; the
    # rent is part of what the holder receives
    return a * u + f + scn.nu * d2u


def allocation_profile(scn: Scenario, u: ScalarField, report: SolveReport) -> AllocationProfile:
    """Holdings and demand implied by the price ``u``.

    Raises:
        NoBubbleError: when the solve did not land in the UniquePositive
            regime (there is no price to allocate against).
    """
    if report.regime.regime is not Regime.UNIQUE_POSITIVE:
        raise NoBubbleError(f"no positive price: regime is {report.regime.regime}")
    grid = u.grid
    h = grid.h
    uv = u.values
    du = gradient_values(uv, h)
    d2u = laplacian_values(uv, h)
    a = scn.r1 - scn.r0.values
    f = scn.source.values
    kind, risk, units = _risk_scale(scn)

    defined = np.abs(du) > DEGENERATE_SLOPE * max(np.max(np.abs(du)), np.finfo(float).tiny)
    defined[0] = defined[-1] = False
    ratio = np.full(grid.n, np.nan)
    num = _excess_drift(scn, uv, du, d2u, a, f)
    ratio[defined] = num[defined] / (risk * du[defined] ** 2)
    theta = uv * ratio
    # CARA: N agents each demanding ratio units; CRRA: wealth Q times the
    # fraction theta, converted to units at price u -- both come to units * ratio
    demand = units * ratio
    return AllocationProfile(kind, grid.nodes.copy(), uv.copy(), theta, demand, defined,
                             clearing_error(scn, u))


def clearing_error(scn: Scenario, u: ScalarField) -> float:
    """sup |demand - K| over the well-conditioned cell midpoints in the window.

    The discrete equation makes demand equal supply exactly at the nodes
    (up to the solver residual), so the check evaluates the demand at cell
    midpoints instead, from midpoint differences of u.  What remains there
    is the discretization error, which is O(h^2).
    """
    grid = u.grid
    h = grid.h
    uv = u.values
    d2 = laplacian_values(uv, h)
    um = 0.5 * (uv[1:] + uv[:-1])
    dum = np.diff(uv) / h
    d2m = 0.5 * (d2[1:] + d2[:-1])
    a = scn.r1 - scn.r0.values
    am = 0.5 * (a[1:] + a[:-1])
    fv = scn.source.values
    fm = 0.5 * (fv[1:] + fv[:-1])
    _, risk, units = _risk_scale(scn)
    xm = 0.5 * (grid.nodes[1:] + grid.nodes[:-1])
    lo, hi = CLEARING_WINDOW
    mask = (xm >= lo) & (xm <= hi) & (np.abs(dum) >= WELL_CONDITIONED * np.max(np.abs(dum)))
    if not np.any(mask):
        return float("nan")
    num = _excess_drift(scn, um[mask], dum[mask], d2m[mask], am[mask], fm[mask])
    demand = units * num / (risk * dum[mask] ** 2)
    return float(np.max(np.abs(demand - scn.K_asset)))


# -- existence threshold ----------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdRow:
    shift: float
    lambda1: float
    regime: Regime


@dataclass(frozen=True)
class ThresholdScan:
    rows: list
    threshold: Optional[float]


def shifted_lambda1(scn: Scenario, shift: float) -> float:
    """lambda1(-nu d2/dx2 + r0 + shift - r1)."""
    a = ScalarField(scn.grid, scn.r1 - scn.r0.values - shift)
    return principal_eigenpair(scn.nu, None, a).lambda1


def gate_threshold_scan(scn: Scenario, shift_range: Sequence[float],
                        xtol: float = THRESHOLD_XTOL) -> ThresholdScan:
    """Principal eigenvalue and verdict as r0 is shifted up by each value.

    The eigenvalue rises one for one with the shift, so the price exists for
    shifts below a single threshold.  The threshold is located by bisection
    between the first pair of adjacent scan shifts with opposite signs.
    """
    shifts = sorted(float(s) for s in shift_range)
    rows = []
    for s in shifts:
        lam = shifted_lambda1(scn, s)
        min_a = float(np.min(scn.r1 - scn.r0.values - s))
        rows.append(ThresholdRow(s, lam, classify(lam, min_a)))
    threshold = None
    for lo, hi in zip(rows, rows[1:]):
        if lo.lambda1 < 0.0 <= hi.lambda1:
            threshold = bisect(lambda s: shifted_lambda1(scn, s), lo.shift, hi.shift,
                               xtol=xtol)
            break
    return ThresholdScan(rows, threshold)
