"""Independent reference computations and seeded problem families for the tests.

Nothing here calls into the solvers under test: the dense operator is
assembled entry by entry from the finite-difference stencil, and its
spectrum comes from LAPACK's general eigensolver.
"""

from __future__ import annotations

import numpy as np

from bubble_hjb.elliptic import EllipticProblem
from bubble_hjb.grid import Grid1D, ScalarField


def dense_operator(nu: float, b: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
    """Dense matrix of -nu u'' - b u' - a u with ghost-node Neumann rows."""
    n = a.size
    m = np.zeros((n, n))
    for i in range(n):
        m[i, i] = 2.0 * nu / h**2 - a[i]
        if i == 0:
            m[0, 1] = -2.0 * nu / h**2
        elif i == n - 1:
            m[i, i - 1] = -2.0 * nu / h**2
        else:
            m[i, i - 1] = -nu / h**2 + b[i] / (2.0 * h)
            m[i, i + 1] = -nu / h**2 - b[i] / (2.0 * h)
    return m


def dense_lambda1(nu: float, a: ScalarField, b: ScalarField | None = None) -> float:
    """Smallest real part in the full spectrum of the dense operator."""
    bv = np.zeros(a.grid.n) if b is None else b.values
    eig = np.linalg.eigvals(dense_operator(nu, bv, a.values, a.grid.h))
    return float(np.min(eig.real))


def symmetric_lambda1(nu: float, a: ScalarField) -> float:
    """lambda1 of the drift-free operator via its symmetrization.

    With trapezoid weights w the matrix W L is symmetric, so
    W^(1/2) L W^(-1/2) has the same spectrum and a symmetric eigensolver
    applies.
    """
    grid = a.grid
    m = dense_operator(nu, np.zeros(grid.n), a.values, grid.h)
    s = np.sqrt(grid.weights)
    sym = (s[:, None] * m) / s[None, :]
    return float(np.linalg.eigvalsh(0.5 * (sym + sym.T))[0])


def smooth_potential(rng: np.random.Generator, grid: Grid1D, modes: int = 4,
                     mean: float = 0.0, scale: float = 1.0) -> ScalarField:
    """mean + a random cosine series with decaying amplitudes."""
    x = grid.nodes
    vals = np.full(grid.n, mean)
    for k in range(1, modes + 1):
        vals += scale * rng.normal() / k * np.cos(k * np.pi * x + rng.uniform(0, np.pi))
    return ScalarField(grid, vals)


def market_excess_return(rng: np.random.Generator, grid: Grid1D) -> ScalarField:
    """a = r1 - r0 with a random nonincreasing r0 whose weighted mean leaves a > 0 on average.

    r0 = p + q x + s x^3 with q < 0 and s <= 0.  The constant test function
    in the Rayleigh quotient bounds lambda1 <= -mean(a) < 0, and a(0) < 0,
    so the existence gate passes by construction.
    """
    x = grid.nodes
    q = rng.uniform(-4.0, -1.0)
    s = rng.uniform(-1.0, 0.0)
    r1 = rng.uniform(-0.5, 0.0)
    shape = -(q * x + s * x**3)             # r1 - r0 without the constant part
    mean_shape = float(np.dot(grid.weights, shape))
    # a(0) = r1 - p < 0 and mean(a) = r1 - p + mean_shape > 0
    offset = -rng.uniform(0.2, 0.8) * mean_shape
    return ScalarField(grid, offset + shape)


def passing_problem(rng: np.random.Generator, grid: Grid1D) -> EllipticProblem:
    return EllipticProblem(rng.uniform(0.05, 0.2), rng.uniform(0.1, 2.0),
                           market_excess_return(rng, grid))


def failing_problem(rng: np.random.Generator, grid: Grid1D,
                    min_lambda1: float = 0.1) -> EllipticProblem:
    """A problem whose dense-oracle lambda1 is at least ``min_lambda1``.

    Candidates are drawn until one qualifies; about half of them have
    max a > 0, so the gate fails for a nontrivial reason.
    """
    while True:
        nu = rng.uniform(0.05, 0.2)
        a = smooth_potential(rng, grid, modes=3, mean=rng.uniform(-1.0, -0.2), scale=1.5)
        coarse = Grid1D(65)
        a_coarse = ScalarField(coarse, np.interp(coarse.nodes, grid.nodes, a.values))
        # cheap screen on a coarse grid, then confirm on the real one
        if symmetric_lambda1(nu, a_coarse) < min_lambda1 + 0.05:
            continue
        if symmetric_lambda1(nu, a) >= min_lambda1:
            return EllipticProblem(nu, rng.uniform(0.1, 2.0), a)


def crypto_like(grid: Grid1D, eps: float = 0.1, nu: float = 0.1) -> EllipticProblem:
    """a = 3x - 1.2: the excess return of the crypto demo market."""
    return EllipticProblem(nu, eps, ScalarField(grid, 3.0 * grid.nodes - 1.2))
