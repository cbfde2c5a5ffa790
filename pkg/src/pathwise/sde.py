"""Windowed Picard iteration for equations driven by a sampled price path.

Solves

    X_t = X_0 + int_0^t K(s, X) dA_s + int_0^t F(s, X) dS_s

on one path.  ``[0, T]`` is cut into windows at the stopping times
``theta_n`` where the volatility clock ``|[S]|`` has grown by ``q`` or the
drift variation ``A^u + A^v`` by ``r`` since the previous cut.  On each
window the Picard map is iterated to its fixed point and patched onto the
history.

Both integrals are left-point sums on a working grid made of the path grid,
the level-n Lebesgue times and the window ends.  Coefficients are
non-anticipating, so after k Picard steps the first k+1 window values are
final; iteration therefore stops after at most (window size) steps.
:func:`solve_direct` runs the same discretisation as a forward recursion
and serves as the cross-check.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BoundViolation, DomainError, ValidationError
from .lebesgue import resolution_level
from .paths import AdaptedProcess, SampledPath
from .quadvar import QVMatrixPath, qv_at_level

__all__ = [
    "FunctionalCoefficient",
    "DriftProcess",
    "SDEProblem",
    "Window",
    "WorkingGrid",
    "WindowResult",
    "Solution",
    "constant_drift",
    "constant_diffusion",
    "linear_drift",
    "linear_diffusion",
    "running_max_drift",
    "zero_drift",
    "zero_diffusion",
    "check_lipschitz",
    "window_thresholds",
    "window_schedule",
    "covering_violations",
    "window_count_bound",
    "working_grid",
    "picard_apply",
    "solve_window",
    "solve",
    "solve_direct",
    "black_scholes_exact",
    "residual",
    "check_integrability",
]

logger = logging.getLogger(__name__)

DEFAULT_PICARD_TOL = 1e-12


# --------------------------------------------------------------------------
# coefficients
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionalCoefficient:
    """Non-anticipating coefficient ``(t, X|[0,t], omega) -> value``.

    ``fn(times, X, omega, start)`` receives prefix arrays (rows ``0..j``)
    and returns the values at rows ``start..j``.  The value at row ``i``
    may depend on rows ``<= i`` only.  ``kind`` is ``"drift"`` (values in
    R^d) or ``"diffusion"`` (values in R^{d x d}).
    """

    fn: Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]
    lipschitz: float
    kind: str = "drift"
    name: str = "custom"

    def __post_init__(self):
        if self.lipschitz < 0:
            raise DomainError("Lipschitz constant must be non-negative")
        if self.kind not in ("drift", "diffusion"):
            raise DomainError(f"unknown coefficient kind {self.kind!r}")

    def __call__(self, times, X, omega, start=0):
        out = np.asarray(self.fn(times, X, omega, start), dtype=float)
        n, d = X.shape[0] - start, X.shape[1]
        shape = (n, d) if self.kind == "drift" else (n, d, d)
        if out.shape != shape:
            out = np.broadcast_to(out, shape)
        return out


def constant_drift(value) -> FunctionalCoefficient:
    c = np.asarray(value, dtype=float)
    return FunctionalCoefficient(
        lambda t, X, w, s: np.broadcast_to(c, (X.shape[0] - s, X.shape[1])), 0.0, "drift", "constant"
    )


def constant_diffusion(value) -> FunctionalCoefficient:
    m = np.asarray(value, dtype=float)
    return FunctionalCoefficient(
        lambda t, X, w, s: np.broadcast_to(m, (X.shape[0] - s, X.shape[1], X.shape[1])),
        0.0, "diffusion", "constant",
    )


def zero_drift() -> FunctionalCoefficient:
    return constant_drift(0.0)


def zero_diffusion() -> FunctionalCoefficient:
    return constant_diffusion(0.0)


def linear_drift(coef: float) -> FunctionalCoefficient:
    """``K(t, X) = coef * X_t``."""
    return FunctionalCoefficient(lambda t, X, w, s: coef * X[s:], abs(coef), "drift", "linear")


def linear_diffusion(coef: float) -> FunctionalCoefficient:
    """``F(t, X) = coef * diag(X_t)``; for d = 1 this is ``coef * X_t``."""

    def fn(t, X, w, s):
        x = X[s:]
        return coef * x[:, :, None] * np.eye(X.shape[1])

    return FunctionalCoefficient(fn, abs(coef), "diffusion", "linear")


def running_max_drift(coef: float) -> FunctionalCoefficient:
    """``K(t, X) = coef * sup_{u <= t} |X_u| * e`` with ``e`` the unit diagonal
    direction; path dependent, Lipschitz with constant ``|coef|``."""

    def fn(t, X, w, s):
        d = X.shape[1]
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        run = np.maximum.accumulate(norms[s:])
        if s > 0:
            run = np.maximum(run, norms[:s].max())
        return coef * run[:, None] * np.full(d, 1.0 / math.sqrt(d))

    return FunctionalCoefficient(fn, abs(coef), "drift", "running_max")


def check_lipschitz(K, F, L, path: SampledPath, n_pairs=20, seed=0, scale=1.0) -> float:
    """Largest ratio of ``|K(x)-K(y)| + |F(x)-F(y)|`` to ``L sup|x-y|`` seen on
    random candidate pairs.  Values ``<= 1`` are consistent with ``L``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n, d = len(path.grid), path.dim
    worst = 0.0
    for _ in range(n_pairs):
        x = scale * np.cumsum(rng.normal(size=(n, d)), axis=0) / math.sqrt(n)
        y = x + scale * rng.normal(size=(n, d)) * rng.uniform()
        dk = K(path.grid, x, path.values) - K(path.grid, y, path.values)
        df = F(path.grid, x, path.values) - F(path.grid, y, path.values)
        lhs = np.sqrt(np.einsum("ij,ij->i", dk, dk)) + np.sqrt(np.einsum("ijk,ijk->i", df, df))
        diff = np.sqrt(np.einsum("ij,ij->i", x - y, x - y))
        rhs = L * np.maximum.accumulate(diff)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
        worst = max(worst, float(ratio.max()))
    return worst


# --------------------------------------------------------------------------
# drift
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DriftProcess:
    """``A = A^u - A^v`` with ``A^u, A^v`` continuous, non-decreasing, from 0.

    Sampled on ``grid`` and linear in between.  ``bound`` is the constant
    ``M`` with ``A^u_T + A^v_T <= M``.
    """

    grid: np.ndarray
    up: np.ndarray
    down: np.ndarray
    bound: float

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        up = np.array(self.up, dtype=float)
        down = np.array(self.down, dtype=float)
        if not (grid.shape == up.shape == down.shape) or grid.ndim != 1:
            raise ValidationError("drift components must share the grid")
        if up[0] != 0.0 or down[0] != 0.0:
            raise ValidationError("drift components must start at 0")
        if np.any(np.diff(up) < 0) or np.any(np.diff(down) < 0):
            raise ValidationError("drift components must be non-decreasing")
        total = up[-1] + down[-1]
        if total > self.bound * (1 + 1e-12):
            raise ValidationError(f"A^u_T + A^v_T = {total} exceeds the bound M = {self.bound}")
        for a in (grid, up, down):
            a.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "up", up)
        object.__setattr__(self, "down", down)

    @classmethod
    def linear(cls, horizon: float, up_rate: float = 0.0, down_rate: float = 0.0, bound=None):
        """``A^u_t = up_rate * t``, ``A^v_t = down_rate * t``."""
        if up_rate < 0 or down_rate < 0:
            raise DomainError("rates must be non-negative")
        grid = np.array([0.0, horizon])
        M = (up_rate + down_rate) * horizon if bound is None else bound
        return cls(grid, grid * up_rate, grid * down_rate, M)

    @classmethod
    def zero(cls, horizon: float):
        return cls.linear(horizon)

    def parts(self, t):
        t = np.asarray(t, dtype=float)
        return np.interp(t, self.grid, self.up), np.interp(t, self.grid, self.down)

    def value(self, t):
        u, v = self.parts(t)
        return u - v

    def variation(self, t):
        u, v = self.parts(t)
        return u + v


# --------------------------------------------------------------------------
# problem / thresholds / schedule
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SDEProblem:
    x0: object  # array-like of length d, or callable omega(0) -> array
    K: FunctionalCoefficient
    F: FunctionalCoefficient
    drift: DriftProcess
    level: int | None = None
    c1: float = 6.0
    tol: float = DEFAULT_PICARD_TOL
    max_iter: int | None = None
    lipschitz: float | None = None

    def __post_init__(self):
        if self.K.kind != "drift" or self.F.kind != "diffusion":
            raise ValidationError("K must be a drift coefficient and F a diffusion coefficient")

    @property
    def L(self) -> float:
        if self.lipschitz is not None:
            return float(self.lipschitz)
        return float(self.K.lipschitz + self.F.lipschitz)

    def initial_value(self, path: SampledPath) -> np.ndarray:
        x0 = self.x0(path.values[0]) if callable(self.x0) else self.x0
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (path.dim,)).copy()
        if not np.all(np.isfinite(x0)):
            raise ValidationError("initial value must be finite")
        return x0


def window_thresholds(L: float, d: int, c1: float = 6.0):
    """``q = 1 / (4 c1^2 L^2 d^4)`` and ``r = 1 / (3 L)``.

    ``L = 0`` gives ``(inf, inf)``: a single window.
    """
    if L < 0:
        raise DomainError("Lipschitz constant must be non-negative")
    if d < 1:
        raise DomainError("dimension must be >= 1")
    if L == 0:
        return math.inf, math.inf
    return 1.0 / (4.0 * c1 * c1 * L * L * d**4), 1.0 / (3.0 * L)


def _first_reach(times, f, level, start):
    """First ``t >= start`` with ``f(t) >= level`` for non-decreasing
    piecewise-linear ``f``; None if never reached."""
    if not math.isfinite(level):
        return None
    j = int(np.searchsorted(f, level, side="left"))
    if j >= len(f):
        return None
    if j == 0 or times[j] <= start:
        return float(max(times[j], start))
    a, b = f[j - 1], f[j]
    t = times[j - 1] + (level - a) / (b - a) * (times[j] - times[j - 1])
    return float(min(max(t, start, times[j - 1]), times[j]))


def window_schedule(clock, drift: DriftProcess, q: float, r: float, horizon: float | None = None):
    """Closed window ends ``theta_0 < theta_1 < ...`` up to the first open one.

    ``clock`` is the volatility clock ``|[S]|``: a :class:`QVMatrixPath`, a
    ``(times, values)`` pair of a non-decreasing piecewise-linear function,
    or a callable (then sampled on the drift grid).
    """
    if isinstance(clock, QVMatrixPath):
        ct, cv = clock.grid, clock.trace
    elif callable(clock):
        ct = drift.grid if horizon is None else np.union1d(drift.grid, [0.0, horizon])
        cv = np.asarray([clock(t) for t in ct], dtype=float)
    else:
        ct, cv = (np.asarray(a, dtype=float) for a in clock)
    T = float(ct[-1]) if horizon is None else float(horizon)
    ts = np.union1d(ct, drift.grid[drift.grid <= T])
    f = np.interp(ts, ct, cv)
    g = drift.variation(ts)
    if np.any(np.diff(f) < 0):
        raise ValidationError("volatility clock must be non-decreasing")
    thetas = []
    theta = 0.0
    while True:
        f0 = float(np.interp(theta, ts, f))
        g0 = float(np.interp(theta, ts, g))
        s = _first_reach(ts, f, f0 + q, theta)
        v = _first_reach(ts, g, g0 + r, theta)
        cands = [c for c in (s, v) if c is not None]
        if not cands:
            break
        nxt = min(cands)
        if nxt <= theta:
            raise BoundViolation(f"window schedule stalled at t={theta}")
        thetas.append(nxt)
        theta = nxt
    return thetas


def covering_violations(thetas, clock_at, variation_at, q, r):
    """Indices n where ``k + l >= n + 1`` fails for the minimal integers with
    ``A^u + A^v <= k r`` and ``|[S]| <= l q`` at ``theta_n``."""
    bad = []
    for n, th in enumerate(thetas):
        a = float(variation_at(th))
        v = float(clock_at(th))
        k = 0 if not math.isfinite(r) else math.ceil(a / r * (1 - 1e-12))
        l = 0 if not math.isfinite(q) else math.ceil(v / q * (1 - 1e-12))
        if k + l < n + 1:
            bad.append(n)
    return bad


def window_count_bound(M: float, qv_total: float, q: float, r: float) -> int:
    """``floor(M / r) + floor(|[S]|_T / q) + 2``."""
    a = 0 if not math.isfinite(r) else math.floor(M / r)
    b = 0 if not math.isfinite(q) else math.floor(qv_total / q)
    return a + b + 2


# --------------------------------------------------------------------------
# working grid and Picard map
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WorkingGrid:
    times: np.ndarray
    omega: np.ndarray  # (n, d) path values
    A: np.ndarray  # drift A = A^u - A^v
    variation: np.ndarray  # A^u + A^v
    clock: np.ndarray  # |[S]|
    thetas: list
    boundaries: list  # window index ranges (start, end), inclusive
    level: int
    q: float
    r: float
    qv: QVMatrixPath


@dataclass(frozen=True)
class Window:
    index: int
    start: int
    end: int
    grid: WorkingGrid

    @property
    def size(self) -> int:
        return self.end - self.start + 1

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[self.start : self.end + 1]


def working_grid(problem: SDEProblem, path: SampledPath) -> WorkingGrid:
    """Path grid + level-n Lebesgue times + window ends, with all inputs
    sampled on it."""
    level = resolution_level(path) if problem.level is None else int(problem.level)
    if problem.drift.grid[-1] < path.horizon:
        raise ValidationError("drift does not cover the path horizon")
    qvp = qv_at_level(path, level)
    q, r = window_thresholds(problem.L, path.dim, problem.c1)
    thetas = window_schedule(qvp, problem.drift, q, r, horizon=path.horizon)
    times = np.union1d(qvp.grid, thetas)
    omega = path.eval(times)
    up, down = problem.drift.parts(times)
    clock = np.interp(times, qvp.grid, qvp.trace)
    cuts = [0] + [int(np.searchsorted(times, th)) for th in thetas]
    last = len(times) - 1
    if cuts[-1] != last:
        cuts.append(last)
    boundaries = [(a, b) for a, b in zip(cuts[:-1], cuts[1:])]
    if not boundaries:
        boundaries = [(0, last)]
    return WorkingGrid(times, omega, up - down, up + down, clock, thetas, boundaries, level, q, r, qvp)


def _windows(wg: WorkingGrid):
    return [Window(i, a, b, wg) for i, (a, b) in enumerate(wg.boundaries)]


def _increments(problem, wg, hist, start, end):
    """Left-point integrand increments on ``[start, end)`` given history rows
    ``0..end``."""
    times, omega = wg.times[: end + 1], wg.omega[: end + 1]
    k = problem.K(times, hist, omega, start)[:-1]
    f = problem.F(times, hist, omega, start)[:-1]
    dA = np.diff(wg.A[start : end + 1])
    dS = np.diff(wg.omega[start : end + 1], axis=0)
    return k * dA[:, None] + np.einsum("kij,kj->ki", f, dS)


def picard_apply(problem: SDEProblem, window: Window, G, X_prev) -> np.ndarray:
    """One application of the window's Picard map.

    ``X_prev`` holds the patched solution on rows ``0..start``; ``G`` the
    candidate on the window (or on the whole working grid, in which case
    only the window rows are read).  The candidate's first row is replaced
    by the history value, so the result does not depend on it.
    """
    wg = window.grid
    s, e = window.start, window.end
    G = np.asarray(G, dtype=float)
    X_prev = np.asarray(X_prev, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if G.shape[0] == len(wg.times):
        G = G[s : e + 1]
    if G.shape[0] != window.size or G.shape[1] != wg.omega.shape[1]:
        raise ValidationError(f"candidate has shape {G.shape}, window needs ({window.size}, d)")
    if X_prev.shape[0] < s + 1:
        raise ValidationError("history does not reach the window start")
    hist = np.concatenate([X_prev[:s], X_prev[s : s + 1], G[1:]], axis=0)
    incr = _increments(problem, wg, hist, s, e)
    return np.cumsum(np.concatenate([X_prev[s : s + 1], incr], axis=0), axis=0)


def _sup_dist(a, b) -> float:
    d = a - b
    return float(np.sqrt(np.einsum("ij,ij->i", d, d)).max())


@dataclass
class WindowResult:
    """Fixed point on one window.

    ``iterations`` is the index of the first iterate that its successor
    reproduced (at least 1); ``applications`` counts every Picard step,
    including the confirming one.
    """

    values: np.ndarray
    iterations: int
    converged: bool
    stabilization_ok: bool
    size: int
    applications: int = 0
    distances: list = field(default_factory=list)


def solve_window(
    problem: SDEProblem,
    window: Window,
    X_prev,
    max_iter: int | None = None,
    tol: float | None = None,
    initial=None,
) -> WindowResult:
    """Iterate the Picard map until successive iterates are ``tol``-close.

    Each step is checked for exact stabilisation: iterate k+1 must agree
    bit-for-bit with iterate k on the first k window points.
    """
    tol = problem.tol if tol is None else tol
    if max_iter is None:
        max_iter = problem.max_iter if problem.max_iter is not None else window.size
    X_prev = np.asarray(X_prev, dtype=float)
    x_start = X_prev[window.start]
    if initial is None:
        G = np.tile(x_start, (window.size, 1))
    elif callable(initial):
        G = np.asarray(initial(window.times, x_start), dtype=float).reshape(window.size, -1)
    else:
        G = np.asarray(initial, dtype=float).reshape(window.size, -1)
    stable = True
    distances = []
    for it in range(1, max_iter + 1):
        new = picard_apply(problem, window, G, X_prev)
        k = it - 1
        if k and not np.array_equal(new[:k], G[:k]):
            stable = False
        dist = _sup_dist(new, G)
        distances.append(dist)
        G = new
        if dist < tol:
            return WindowResult(G, max(it - 1, 1), True, stable, window.size, it, distances)
    logger.warning("window %d: Picard iteration unconverged after %d steps", window.index, max_iter)
    return WindowResult(G, max_iter, False, stable, window.size, max_iter, distances)


# --------------------------------------------------------------------------
# full solves
# --------------------------------------------------------------------------


@dataclass
class Solution:
    X: AdaptedProcess
    thetas: list
    windows: list  # WindowResult per window (empty for solve_direct)
    converged: bool
    residual: float
    level: int
    q: float
    r: float
    qv_total: float
    window_bound: int
    covering_ok: bool
    patching_ok: bool = True

    @property
    def iterations(self):
        return [w.iterations for w in self.windows]

    @property
    def closed_windows(self) -> int:
        return len(self.thetas)

    def report(self) -> dict:
        return {
            "level": self.level,
            "q": self.q,
            "r": self.r,
            "qv_total": self.qv_total,
            "thetas": [float(t) for t in self.thetas],
            "closed_windows": self.closed_windows,
            "window_bound": self.window_bound,
            "covering_ok": self.covering_ok,
            "converged": self.converged,
            "patching_ok": self.patching_ok,
            "iterations": self.iterations,
            "window_sizes": [w.size for w in self.windows],
            "stabilization_ok": all(w.stabilization_ok for w in self.windows),
            "residual": self.residual,
        }


def residual(problem: SDEProblem, wg: WorkingGrid, X: np.ndarray) -> float:
    """``sup_t |X_t - X_0 - int K dA - int F dS|`` on the working grid."""
    incr = _increments(problem, wg, X, 0, len(wg.times) - 1)
    rebuilt = X[0] + np.concatenate([np.zeros((1, X.shape[1])), np.cumsum(incr, axis=0)])
    return _sup_dist(rebuilt, X)


def check_integrability(problem: SDEProblem, wg: WorkingGrid) -> None:
    """Finiteness of ``int K(s, 0) dA^u``, ``int K(s, 0) dA^v`` and
    ``int F(s, 0) dS`` on the working grid; the only per-path check of the
    integrability assumption available."""
    zero = np.zeros_like(wg.omega)
    inc = _increments(problem, wg, zero, 0, len(wg.times) - 1)
    k0 = problem.K(wg.times, zero, wg.omega, 0)
    if not (np.all(np.isfinite(inc)) and np.all(np.isfinite(k0))):
        raise ValidationError("coefficients at X = 0 give non-finite integrals on this path")


def _bookkeeping(problem, wg):
    check_integrability(problem, wg)
    qv_total = float(wg.clock[-1])
    bound = window_count_bound(problem.drift.bound, qv_total, wg.q, wg.r)
    if len(wg.thetas) > bound:
        raise BoundViolation(
            f"{len(wg.thetas)} closed windows exceed the bound {bound}; "
            "the volatility clock or drift variation is inconsistent"
        )
    clock_at = lambda t: np.interp(t, wg.times, wg.clock)
    var_at = lambda t: np.interp(t, wg.times, wg.variation)
    bad = covering_violations(wg.thetas, clock_at, var_at, wg.q, wg.r)
    if bad:
        raise BoundViolation(f"window counting inequality fails at theta indices {bad}")
    return qv_total, bound


def solve(problem: SDEProblem, path: SampledPath, initial=None, grid: WorkingGrid | None = None) -> Solution:
    """Patch the window fixed points ``X^0, X^1, ...`` into one solution."""
    wg = working_grid(problem, path) if grid is None else grid
    qv_total, bound = _bookkeeping(problem, wg)
    n, d = len(wg.times), path.dim
    X = np.full((n, d), np.nan)
    X[0] = problem.initial_value(path)
    results = []
    patching_ok = True
    for win in _windows(wg):
        before = X[: win.start + 1].copy()
        res = solve_window(problem, win, X, initial=initial)
        X[win.start : win.end + 1] = res.values
        patching_ok &= bool(np.array_equal(before, X[: win.start + 1]))
        results.append(res)
    res_norm = residual(problem, wg, X)
    return Solution(
        AdaptedProcess(wg.times, X), list(wg.thetas), results,
        all(r.converged for r in results), res_norm, wg.level, wg.q, wg.r,
        qv_total, bound, True, patching_ok,
    )


def solve_direct(problem: SDEProblem, path: SampledPath, grid: WorkingGrid | None = None) -> Solution:
    """Forward recursion ``X_{k+1} = X_k + K_k dA_k + F_k dS_k`` on the same
    working grid as :func:`solve`."""
    wg = working_grid(problem, path) if grid is None else grid
    qv_total, bound = _bookkeeping(problem, wg)
    n, d = len(wg.times), path.dim
    X = np.empty((n, d))
    X[0] = problem.initial_value(path)
    for k in range(n - 1):
        X[k + 1] = X[k] + _increments(problem, wg, X[: k + 2], k, k + 1)[0]
    res_norm = residual(problem, wg, X)
    return Solution(
        AdaptedProcess(wg.times, X), list(wg.thetas), [], True, res_norm,
        wg.level, wg.q, wg.r, qv_total, bound, True,
    )


def black_scholes_exact(x0: float, sigma: float, drift: DriftProcess, path: SampledPath,
                        qv: QVMatrixPath, times=None) -> AdaptedProcess:
    """``x0 * exp(A_t - sigma^2 [S]_t / 2 + sigma (S_t - S_0))`` (d = 1)."""
    if path.dim != 1:
        raise DomainError("the explicit solution is one-dimensional")
    times = path.grid if times is None else np.asarray(times, dtype=float)
    S = path.eval(times)[:, 0]
    A = drift.value(times)
    qs = qv.at(times)[:, 0, 0]
    X = x0 * np.exp(A - 0.5 * sigma * sigma * qs + sigma * (S - path.values[0, 0]))
    return AdaptedProcess(times, X)
