"""Uniform grid on [0, 1] and the discrete Neumann calculus built on it.

Every spatial function in the package (prices, potentials, drifts, sources,
eigenfunctions) is a :class:`ScalarField` living on a :class:`Grid1D`.  The
Neumann condition u'(0) = u'(1) = 0 is encoded by ghost-node reflection,
u[-1] = u[1] and u[n] = u[n-2], which keeps the stencils second order up to
the boundary.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .errors import InvalidGridError, InvalidParameterError

ArrayLike = Union[np.ndarray, list, tuple, float]


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid with ``n`` nodes x_i = i*h, h = 1/(n-1)."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise InvalidGridError(f"grid needs at least 3 nodes, got n={self.n}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.n) * self.h
        x[-1] = 1.0
        x.flags.writeable = False
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (sum to 1)."""
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.flags.writeable = False
        return w


def make_grid(n: int) -> Grid1D:
    return Grid1D(int(n))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a function on ``grid``.

    The values array is copied and frozen, so fields can be shared freely
    between threads.
    """

    grid: Grid1D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 0:
            v = np.full(self.grid.n, float(v))
        if v.shape != (self.grid.n,):
            raise InvalidParameterError(
                f"field has {v.size} values but grid has {self.grid.n} nodes")
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.grid.n

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values: ArrayLike) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


def field_from(grid: Grid1D, spec: Union[Callable[[np.ndarray], ArrayLike], ArrayLike]) -> ScalarField:
    """Build a field from a callable of x, a constant, or an array of nodal values."""
    if callable(spec):
        vals = np.broadcast_to(np.asarray(spec(grid.nodes), dtype=float), (grid.n,))
        return ScalarField(grid, vals)
    return ScalarField(grid, spec)


def constant(grid: Grid1D, c: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.n, float(c)))


# -- array kernels ------------------------------------------------------------
# The solvers call these on raw arrays in their inner loops.

def laplacian_values(u: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(u)
    out[1:-1] = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / (h * h)
    out[0] = 2.0 * (u[1] - u[0]) / (h * h)
    out[-1] = 2.0 * (u[-2] - u[-1]) / (h * h)
    return out


def gradient_values(u: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    return out


# -- field operations ---------------------------------------------------------

def neumann_laplacian(u: ScalarField) -> ScalarField:
    """Second difference with ghost-node reflection at both ends."""
    return ScalarField(u.grid, laplacian_values(u.values, u.grid.h))


def gradient(u: ScalarField) -> ScalarField:
    """Centered first difference; exactly zero at the two boundary nodes."""
    return ScalarField(u.grid, gradient_values(u.values, u.grid.h))


def gradient_squared(u: ScalarField) -> ScalarField:
    g = gradient_values(u.values, u.grid.h)
    return ScalarField(u.grid, g * g)


def norms(u: ScalarField) -> tuple[float, float]:
    """Return ``(sup_norm, l1_norm)``; the L1 norm uses trapezoid weights."""
    a = np.abs(u.values)
    return float(a.max()), float(np.dot(u.grid.weights, a))


def sup_norm(u: Union[ScalarField, np.ndarray]) -> float:
    return float(np.max(np.abs(np.asarray(u))))


def integrate(u: ScalarField) -> float:
    return float(np.dot(u.grid.weights, u.values))


def interpolate(u: ScalarField, x: ArrayLike) -> np.ndarray:
    return np.interp(x, u.grid.nodes, u.values)


# -- CSV ----------------------------------------------------------------------

def write_field_csv(u: ScalarField, path: Union[str, Path, None] = None) -> str:
    """Write ``x,value`` rows at 17 significant digits; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "value"])
    for xi, vi in zip(u.grid.nodes, u.values):
        w.writerow([f"{xi:.17g}", f"{vi:.17g}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_field_csv(source: Union[str, Path], column: str = "value") -> ScalarField:
    """Read a field from CSV text or a file path.

    The x column must hold a uniform grid on [0, 1]; ``column`` picks the
    value column (so multi-column scenario files can be sampled too).
    """
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or "x" not in rows[0] or column not in rows[0]:
        raise InvalidParameterError(f"CSV needs columns 'x' and '{column}'")
    x = np.array([float(r["x"]) for r in rows])
    v = np.array([float(r[column]) for r in rows])
    grid = make_grid(len(x))
    if np.max(np.abs(x - grid.nodes)) > 1e-9:
        raise InvalidParameterError("CSV x column is not the uniform grid on [0, 1]")
    return ScalarField(grid, v)
