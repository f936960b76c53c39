"""Monte Carlo checks of the stochastic-control reading of the equation.

The state is the reflected diffusion dX = (b + alpha) dt + sqrt(2 nu) dW on
[0, 1], simulated by Euler-Maruyama with reflection by folding.  Two
estimators are provided:

* :func:`estimate_value` evaluates the discounted cost
  E int_0^inf exp(int_0^t a(X_s) ds) (|alpha_t|^2/2 + g(X_t)) dt under the
  feedback alpha = -U'(X), where U is the solution written in the
  half-normalized form.  It should reproduce U(x0).
* :func:`estimate_growth_rate` estimates the exponential growth rate of
  E exp(int_0^T a(Y_t) dt) for the uncontrolled diffusion, which should be
  -lambda1(-nu d2/dx2 - b d/dx - a).

Normals come from a counter-based generator: normal number k of path p is a
pure function of (master_seed, p, k), so estimates do not depend on how the
paths are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .elliptic import EllipticProblem
from .errors import InvalidParameterError, WeightExplosionError
from .grid import ScalarField, gradient_values

EXPLOSION_LIMIT = 1e12

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@dataclass(frozen=True)
class McConfig:
    paths: int = 100_000
    dt: float = 1e-3
    horizon: float = 50.0
    master_seed: int = 42
    x0: float = 0.5
    weight_floor: float = 1e-12

    def __post_init__(self):
        if self.paths < 1:
            raise InvalidParameterError("paths must be >= 1")
        if not self.dt > 0 or not self.horizon > 0:
            raise InvalidParameterError("dt and horizon must be > 0")
        if not 0.0 <= self.x0 <= 1.0:
            raise InvalidParameterError("x0 must lie in [0, 1]")
        if self.weight_floor < 0:
            raise InvalidParameterError("weight_floor must be >= 0")
        if not 0 <= self.master_seed < 2**64:
            raise InvalidParameterError("master_seed must be an unsigned 64-bit integer")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    paths_used: int
    truncation_mass: float = 0.0
    seed: int = 0


# -- counter-based normals ------------------------------------------------------
# Normal k of a path is drawn by the Marsaglia-Tsang ziggurat (128 layers) from
# SplitMix64 output at counter position k + 1 of the path's key; the rare
# rejection branches draw further uniforms from a sub-stream keyed by that
# same output.

def _ziggurat_tables():
    m1 = 2147483648.0
    dn = 3.442619855899
    tn = dn
    vn = 9.91256303526217e-3
    kn = np.zeros(128)
    wn = np.zeros(128)
    fn = np.zeros(128)
    q = vn / math.exp(-0.5 * dn * dn)
    kn[0] = (dn / q) * m1
    kn[1] = 0.0
    wn[0] = q / m1
    wn[127] = dn / m1
    fn[0] = 1.0
    fn[127] = math.exp(-0.5 * dn * dn)
    for i in range(126, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        kn[i + 1] = (dn / tn) * m1
        tn = dn
        fn[i] = math.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


_KN, _WN, _FN = _ziggurat_tables()
_ZIG_R = 3.442619855899
_S32 = np.uint64(32)
_LOW7 = np.uint64(127)
_HALF32 = 2147483648


@numba.njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def _path_key(master_seed, path_index):
    return _mix64(_mix64(master_seed) + (path_index + _ONE) * _GOLDEN)


@numba.njit(cache=True, inline="always")
def _uniform(z):
    return ((z >> _S11) + 0.5) * _INV53


@numba.njit(cache=True, inline="always")
def _normal(key, k, kn, wn, fn):
    z = _mix64(key + (k + _ONE) * _GOLDEN)
    hz = np.int64(z >> _S32) - _HALF32
    iz = np.int64(z & _LOW7)
    if abs(hz) < kn[iz]:
        return hz * wn[iz]
    # Rejection branches, written out here rather than in a helper: a call
    # in this position costs more than the whole fast path.
    j = np.uint64(0)
    while True:
        x = hz * wn[iz]
        if iz == 0:
            while True:
                j += _ONE
                u1 = _uniform(_mix64(z + j * _GOLDEN))
                j += _ONE
                u2 = _uniform(_mix64(z + j * _GOLDEN))
                xt = -math.log(u1) / _ZIG_R
                y = -math.log(u2)
                if y + y >= xt * xt:
                    break
            return _ZIG_R + xt if hz > 0 else -_ZIG_R - xt
        j += _ONE
        if fn[iz] + _uniform(_mix64(z + j * _GOLDEN)) * (fn[iz - 1] - fn[iz]) < math.exp(-0.5 * x * x):
            return x
        j += _ONE
        z2 = _mix64(z + j * _GOLDEN)
        hz = np.int64(z2 >> _S32) - _HALF32
        iz = np.int64(z2 & _LOW7)
        if abs(hz) < kn[iz]:
            return hz * wn[iz]


@numba.njit(cache=True)
def _normals(master_seed, path_index, count, kn, wn, fn):
    key = _path_key(master_seed, path_index)
    out = np.empty(count)
    for k in range(count):
        out[k] = _normal(key, np.uint64(k), kn, wn, fn)
    return out


def standard_normals(master_seed: int, path_index: int, count: int) -> np.ndarray:
    """The first ``count`` normals of path ``path_index`` (for inspection and tests)."""
    return _normals(np.uint64(master_seed), np.uint64(path_index), count, _KN, _WN, _FN)


# -- kernels --------------------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _fold(x):
    while x < 0.0 or x > 1.0:
        if x < 0.0:
            x = -x
        if x > 1.0:
            x = 2.0 - x
    return x


@numba.njit(cache=True, inline="always")
def _locate(x, inv_h, n):
    s = x * inv_h
    i = int(s)
    if i > n - 2:
        i = n - 2
    return i, s - i


@numba.njit(cache=True, inline="always")
def _expm(y):
    # exp(y) for the small per-step exponents; the truncation error y^7/7! is
    # below double rounding for |y| < 1e-2, and math.exp is slow in this loop
    if abs(y) < 1e-2:
        return 1.0 + y * (1.0 + y * (0.5 + y * (1.0 / 6.0 + y * (1.0 / 24.0 + y * (1.0 / 120.0 + y / 720.0)))))
    return math.exp(y)


@numba.njit(cache=True, inline="always")
def _reflect(x):
    x = abs(x)
    x = min(x, 2.0 - x)
    if x < 0.0:
        x = _fold(x)
    return x


@numba.njit(cache=True, fastmath={"contract"})
def _path_kernel(table, x0, sigma_sqrt_dt, steps, master_seed, path_index, kn, wn, fn):
    """Table columns: drift."""
    ncell = table.shape[0]
    inv_h = float(ncell)
    key = _path_key(master_seed, path_index)
    out = np.empty(steps + 1)
    x = x0
    out[0] = x
    for k in range(steps):
        s = x * inv_h
        i = min(int(s), ncell - 1)
        x = _reflect(x + (table[i, 0] + table[i, 1] * s)
                     + sigma_sqrt_dt * _normal(key, np.uint64(k), kn, wn, fn))
        out[k + 1] = x
    return out


@numba.njit(cache=True, fastmath={"contract"})
def _endpoint_kernel(table, x0, sigma_sqrt_dt, steps, master_seed, paths, out, kn, wn, fn):
    """Final states of paths 0..paths-1; the same streams as :func:`_path_kernel`."""
    ncell = table.shape[0]
    inv_h = float(ncell)
    for p in range(paths):
        key = _path_key(master_seed, np.uint64(p))
        x = x0
        for k in range(steps):
            s = x * inv_h
            i = min(int(s), ncell - 1)
            x = _reflect(x + (table[i, 0] + table[i, 1] * s)
                         + sigma_sqrt_dt * _normal(key, np.uint64(k), kn, wn, fn))
        out[p] = x


LANES = 8


def _cell_table(fields, dt: float) -> np.ndarray:
    """Per-cell affine coefficients of ``dt * v`` in the scaled coordinate s = x/h.

    Row i holds (A, B) pairs, one per field, with dt v(x) = A + B s on cell
    [x_i, x_{i+1}].  Interleaving the fields keeps one step's lookups on a
    single cache line.
    """
    n = fields[0].size
    i = np.arange(n - 1)
    cols = []
    for v in fields:
        slope = (v[1:] - v[:-1]) * dt
        cols += [v[:-1] * dt - i * slope, slope]
    return np.ascontiguousarray(np.stack(cols, axis=1))


@numba.njit(cache=True, fastmath={"contract"})
def _value_kernel(table, value, x0, sigma_sqrt_dt, steps, floor, limit, master_seed,
                  paths, costs, tails, kn, wn, fn):
    """Per-path discounted cost; ``tails`` gets w * value(X) at truncation.

    Table columns: drift, running cost, potential (see :func:`_cell_table`).
    Paths advance in ``LANES`` interleaved lanes, refilled as paths finish,
    so independent dependency chains overlap; every path still consumes its
    own stream in order, so the result does not depend on the lane count.
    """
    ncell = table.shape[0]
    inv_h = float(ncell)
    keys = np.zeros(LANES, np.uint64)
    ctrs = np.zeros(LANES, np.uint64)
    ks = np.zeros(LANES, np.int64)
    pid = np.full(LANES, -1, np.int64)
    xs = np.full(LANES, x0)
    ws = np.ones(LANES)
    accs = np.zeros(LANES)
    nxt = 0
    active = 0
    for j in range(LANES):
        if nxt < paths:
            pid[j] = nxt
            keys[j] = _path_key(master_seed, np.uint64(nxt))
            ctrs[j] = keys[j]
            nxt += 1
            active += 1
    while active > 0:
        for j in range(LANES):
            c = ctrs[j] + _GOLDEN
            ctrs[j] = c
            z = _mix64(c)
            hz = np.int64(z >> _S32) - _HALF32
            iz = z & _LOW7
            if abs(hz) < kn[iz]:
                xi = hz * wn[iz]
            else:
                xi = _normal(keys[j], np.uint64(ks[j]), kn, wn, fn)
            x = xs[j]
            w = ws[j]
            s = x * inv_h
            i = min(int(s), ncell - 1)
            accs[j] += w * (table[i, 2] + table[i, 3] * s)
            ws[j] = w * _expm(table[i, 4] + table[i, 5] * s)
            x = _reflect(x + (table[i, 0] + table[i, 1] * s) + sigma_sqrt_dt * xi)
            xs[j] = x
            ks[j] += 1
        for j in range(LANES):
            w = ws[j]
            if w < floor or w > limit or ks[j] >= steps:
                p = pid[j]
                if p < 0:
                    continue
                if w > limit:
                    return w
                costs[p] = accs[j]
                i, t = _locate(xs[j], inv_h, ncell + 1)
                tails[p] = w * (value[i] + t * (value[i + 1] - value[i]))
                xs[j] = x0
                ws[j] = 1.0
                accs[j] = 0.0
                ks[j] = 0
                if nxt < paths:
                    pid[j] = nxt
                    keys[j] = _path_key(master_seed, np.uint64(nxt))
                    ctrs[j] = keys[j]
                    nxt += 1
                else:
                    pid[j] = -1
                    active -= 1
    return 0.0


@numba.njit(cache=True, fastmath={"contract"})
def _growth_kernel(table, x0, sigma_sqrt_dt, half_steps, master_seed, paths,
                   log_half, log_full, kn, wn, fn):
    """Table columns: drift, potential."""
    ncell = table.shape[0]
    inv_h = float(ncell)
    for p in range(paths):
        key = _path_key(master_seed, np.uint64(p))
        x = x0
        acc = 0.0
        for k in range(2 * half_steps):
            s = x * inv_h
            i = min(int(s), ncell - 1)
            acc += table[i, 2] + table[i, 3] * s
            xi = _normal(key, np.uint64(k), kn, wn, fn)
            x = _reflect(x + (table[i, 0] + table[i, 1] * s) + sigma_sqrt_dt * xi)
            if k + 1 == half_steps:
                log_half[p] = acc
        log_full[p] = acc


# -- public API -------------------------------------------------------------------

def _mean_and_error(samples: np.ndarray) -> tuple[float, float]:
    m = math.fsum(samples) / samples.size
    if samples.size < 2:
        return m, 0.0
    var = math.fsum((samples - m) ** 2) / (samples.size - 1)
    return m, math.sqrt(var / samples.size)


def simulate_reflected_path(nu: float, drift: ScalarField, x0: float, cfg: McConfig,
                            path_index: int) -> np.ndarray:
    """States X_0 = x0, X_1, ..., X_steps of one reflected Euler-Maruyama path."""
    if nu < 0:
        raise InvalidParameterError("nu must be >= 0")
    if not 0.0 <= x0 <= 1.0:
        raise InvalidParameterError("x0 must lie in [0, 1]")
    return _path_kernel(_cell_table([drift.values], cfg.dt), float(x0),
                        math.sqrt(2.0 * nu * cfg.dt), cfg.steps,
                        np.uint64(cfg.master_seed), np.uint64(path_index), _KN, _WN, _FN)


def terminal_states(nu: float, drift: ScalarField, cfg: McConfig) -> np.ndarray:
    """X_T of paths 0..cfg.paths-1, all started at ``cfg.x0``, with T = cfg.horizon.

    Entry p equals the last state of ``simulate_reflected_path(..., path_index=p)``.
    """
    if nu < 0:
        raise InvalidParameterError("nu must be >= 0")
    out = np.empty(cfg.paths)
    _endpoint_kernel(_cell_table([drift.values], cfg.dt), float(cfg.x0),
                     math.sqrt(2.0 * nu * cfg.dt), cfg.steps, np.uint64(cfg.master_seed),
                     cfg.paths, out, _KN, _WN, _FN)
    return out


def half_normalized(p: EllipticProblem, u: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Rewrite (u, f) in the form with quadratic coefficient 1/2.

    U = 2 eps u solves -nu U'' + U'^2/2 - b U' = a U + 2 eps f.
    """
    scale = 2.0 * p.eps
    return scale * u.values, scale * p.f.values


def estimate_value(p: EllipticProblem, u_eps: ScalarField, x0: float, cfg: McConfig,
                   control: Optional[ScalarField] = None) -> McEstimate:
    """Monte Carlo value of the perturbed control problem started at ``x0``.

    ``u_eps`` must solve ``p`` with a constant source f > 0.  The simulation
    runs in the half-normalized form (see :func:`half_normalized`) with the
    feedback alpha = -U', or ``control`` when given (an alternative feedback,
    also in half-normalized units).  The returned mean and error are mapped
    back to the units of ``u_eps``, so the mean estimates ``u_eps(x0)``.

    Paths stop when the discount weight falls below ``cfg.weight_floor`` or at
    the horizon; ``truncation_mass`` is the share of the value that the
    stopped paths still carried, estimated by weight * U(X) at the stop.

    Raises:
        WeightExplosionError: if a discount weight exceeds 1e12, which means
            the controlled operator has a nonpositive principal eigenvalue.
    """
    if not 0.0 <= x0 <= 1.0:
        raise InvalidParameterError("x0 must lie in [0, 1]")
    big_u, g = half_normalized(p, u_eps)
    h = p.grid.h
    alpha = -gradient_values(big_u, h) if control is None else np.asarray(control.values, float)
    drift = p.b.values + alpha
    running = 0.5 * alpha * alpha + g
    costs = np.zeros(cfg.paths)
    tails = np.zeros(cfg.paths)
    table = _cell_table([drift, running, p.a.values], cfg.dt)
    boom = _value_kernel(table, np.ascontiguousarray(big_u), float(x0),
                         math.sqrt(2.0 * p.nu * cfg.dt), cfg.steps, cfg.weight_floor,
                         EXPLOSION_LIMIT, np.uint64(cfg.master_seed), cfg.paths,
                         costs, tails, _KN, _WN, _FN)
    if boom > 0.0:
        raise WeightExplosionError(
            f"discount weight reached {boom:.3g}; shorten the horizon or check the "
            "existence gate of the controlled operator")
    scale = 2.0 * p.eps
    mean, se = _mean_and_error(costs)
    tail = math.fsum(tails) / cfg.paths
    total = mean + tail
    mass = tail / total if total > 0 else 0.0
    return McEstimate(mean / scale, se / scale, cfg.paths, min(max(mass, 0.0), 1.0),
                      cfg.master_seed)


def estimate_growth_rate(nu: float, b: Optional[ScalarField], a: ScalarField,
                         cfg: McConfig) -> McEstimate:
    """Empirical growth rate of E exp(int_0^T a(Y) dt) between T/2 and T.

    T is ``cfg.horizon``.  The standard error comes from the delta method on
    the pair of sample means.
    """
    half = cfg.steps // 2
    if half < 1:
        raise InvalidParameterError("horizon must span at least two steps")
    drift = np.zeros(a.grid.n) if b is None else np.ascontiguousarray(b.values)
    log_half = np.zeros(cfg.paths)
    log_full = np.zeros(cfg.paths)
    table = _cell_table([drift, a.values], cfg.dt)
    _growth_kernel(table, float(cfg.x0), math.sqrt(2.0 * nu * cfg.dt), half,
                   np.uint64(cfg.master_seed), cfg.paths, log_half, log_full, _KN, _WN, _FN)
    # factor out the largest exponent before exponentiating
    shift1, shift2 = log_half.max(), log_full.max()
    w1 = np.exp(log_half - shift1)
    w2 = np.exp(log_full - shift2)
    m1, m2 = math.fsum(w1) / cfg.paths, math.fsum(w2) / cfg.paths
    span = half * cfg.dt
    rate = float(((math.log(m2) + shift2) - (math.log(m1) + shift1)) / span)
    if cfg.paths > 1:
        c = np.cov(np.vstack([w1 / m1, w2 / m2]), ddof=1)
        var = (c[0, 0] + c[1, 1] - 2.0 * c[0, 1]) / cfg.paths
        se = math.sqrt(max(var, 0.0)) / span
    else:
        se = 0.0
    if not math.isfinite(rate):
        raise WeightExplosionError("growth-rate weights overflowed")
    return McEstimate(rate, se, cfg.paths, 0.0, cfg.master_seed)
