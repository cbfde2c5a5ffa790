"""Simple trading strategies and their integral processes.

A strategy exists in two forms.  A :class:`StrategyRule` is a pair of
non-anticipating functions (rebalancing times, positions) that can be run
on any path.  A :class:`StrategyRealization` is the outcome on one path:
times ``tau_0 = 0 <= tau_1 <= ... <= tau_m`` and positions ``g_l`` held on
``(tau_l, tau_{l+1}]`` (``g_m`` until T).  All integral arithmetic works on
realizations, clipping at ``t`` exactly like ``sum_l g_l . S_{tau_l^t,
tau_{l+1}^t}``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .lebesgue import merged_partition
from .paths import SampledPath
from .quadvar import QVMatrixPath

__all__ = [
    "StrategyRule",
    "StrategyRealization",
    "AdmissibilityCheck",
    "DEFAULT_MAX_REBALANCES",
    "realize",
    "integrate",
    "integral_path",
    "integral_qv",
    "integral_qv_path",
    "truncate",
    "qv_norm",
    "check_admissible",
    "position_sup",
    "combine",
    "buy_and_hold",
    "zero_strategy",
    "lebesgue_rebalance",
    "grid_rebalance",
    "realization_to_csv",
]

DEFAULT_MAX_REBALANCES = 1 << 22


@dataclass(frozen=True)
class StrategyRule:
    """Non-anticipating trading rule.

    ``rebalance(path)`` returns the stopping times after 0 at which the
    rule trades; it may only inspect the path up to each returned time.
    ``position(path, times)`` returns one position per time (rows of shape
    ``(d,)`` or ``(r, d)``), each computed from the path up to that time.
    """

    rebalance: Callable[[SampledPath], np.ndarray]
    position: Callable[[SampledPath, np.ndarray], np.ndarray]
    name: str = "rule"


@dataclass(frozen=True, eq=False)
class StrategyRealization:
    times: np.ndarray
    positions: np.ndarray
    path: SampledPath

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        pos = np.array(self.positions, dtype=float)
        if times.ndim != 1 or times.size == 0 or times[0] != 0.0:
            raise ValidationError("realization times must start at 0")
        if np.any(np.diff(times) < 0):
            raise ValidationError("realization times must be non-decreasing")
        if times[-1] > self.path.horizon:
            raise ValidationError("rebalancing time beyond the horizon")
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] != times.size or pos.shape[-1] != self.path.dim:
            raise ValidationError(
                f"positions shape {pos.shape} incompatible with {times.size} times, d={self.path.dim}"
            )
        if not np.all(np.isfinite(pos)):
            raise ValidationError("positions must be finite")
        times.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)

    @property
    def matrix_valued(self) -> bool:
        return self.positions.ndim == 3

    def restrict(self, t: float) -> "StrategyRealization":
        """Schedule entries with ``tau_l <= t`` (for prefix replay)."""
        k = int(np.searchsorted(self.times, t, side="right"))
        return StrategyRealization(self.times[:k], self.positions[:k], self.path.truncate(t))

    def held_at(self, t) -> np.ndarray:
        """Position in force just after ``t`` (the ``g_l`` with ``tau_l <= t``)."""
        k = np.searchsorted(self.times, np.asarray(t, float), side="right") - 1
        return self.positions[k]

    def scaled(self, factor: float) -> "StrategyRealization":
        return StrategyRealization(self.times, factor * self.positions, self.path)


@dataclass(frozen=True)
class AdmissibilityCheck:
    lam: float
    admissible: bool
    min_capital: float
    worst_time: float


def realize(
    rule: StrategyRule, path: SampledPath, max_rebalances: int = DEFAULT_MAX_REBALANCES
) -> StrategyRealization:
    """Run ``rule`` on ``path``."""
    taus = np.asarray(rule.rebalance(path), dtype=float).ravel()
    if taus.size > max_rebalances:
        raise DomainError(
            f"rule {rule.name!r} produced more than max_rebalances={max_rebalances} times"
        )
    taus = np.unique(taus[(taus > 0) & (taus <= path.horizon)])
    times = np.concatenate([[0.0], taus])
    pos = np.asarray(rule.position(path, times), dtype=float)
    return StrategyRealization(times, pos, path)


def _gains_at_knots(real: StrategyRealization):
    S = real.path.eval(real.times)
    dS = np.diff(S, axis=0)
    g = real.positions[:-1]
    if real.matrix_valued:
        step = np.einsum("lrd,ld->lr", g, dS)
    else:
        step = np.einsum("ld,ld->l", g, dS)
    zero = np.zeros((1,) + step.shape[1:])
    return S, np.concatenate([zero, np.cumsum(step, axis=0)])


def integral_path(real: StrategyRealization, t) -> np.ndarray:
    """``(G . S)_t`` for an array of times (vector per time if matrix-valued)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > real.path.horizon):
        raise DomainError(f"time outside [0, {real.path.horizon}]")
    S, cum = _gains_at_knots(real)
    k = np.searchsorted(real.times, t, side="right") - 1
    dS = real.path.eval(t) - S[k]
    g = real.positions[k]
    if real.matrix_valued:
        return cum[k] + np.einsum("...rd,...d->...r", g, dS)
    return cum[k] + np.einsum("...d,...d->...", g, dS)


def integrate(real: StrategyRealization, t: float):
    """``(G . S)_t = sum_l g_l . S_{tau_l ^ t, tau_{l+1} ^ t}``."""
    out = integral_path(real, np.asarray(float(t)))
    return float(out) if out.ndim == 0 else out


def _check_same_path(real: StrategyRealization, qv: QVMatrixPath):
    if qv.dim != real.path.dim or qv.horizon != real.path.horizon:
        raise ValidationError("quadratic variation was computed on a different path")


def integral_qv_path(real: StrategyRealization, qv: QVMatrixPath, t) -> np.ndarray:
    """``[(G . S)]_t = sum_l g_l^T ([S]_{tau_{l+1} ^ t} - [S]_{tau_l ^ t}) g_l``."""
    _check_same_path(real, qv)
    if real.matrix_valued:
        raise ValidationError("use qv_norm for matrix-valued strategies")
    t = np.asarray(t, dtype=float)
    Qk = qv.at(real.times)
    dQ = np.diff(Qk, axis=0)
    g = real.positions
    step = np.einsum("li,lij,lj->l", g[:-1], dQ, g[:-1])
    cum = np.concatenate([[0.0], np.cumsum(step)])
    k = np.searchsorted(real.times, t, side="right") - 1
    part = qv.at(t) - Qk[k]
    return cum[k] + np.einsum("...i,...ij,...j->...", g[k], part, g[k])


def integral_qv(real: StrategyRealization, qv: QVMatrixPath, t: float) -> float:
    return float(integral_qv_path(real, qv, np.asarray(float(t))))


def position_sup(real: StrategyRealization, t) -> np.ndarray:
    """``G*_t = sup_{s <= t} |G_s|``: ``g_0`` plus every ``g_l`` with ``tau_l < t``."""
    t = np.asarray(t, dtype=float)
    flat = real.positions.reshape(len(real.times), -1)
    norms = np.maximum.accumulate(np.sqrt(np.einsum("ij,ij->i", flat, flat)))
    k = np.maximum(np.searchsorted(real.times, t, side="left") - 1, 0)
    return norms[k]


def truncate(real: StrategyRealization, Q: float, qv: QVMatrixPath) -> StrategyRealization:
    """``G^Q_t = G_t 1{|[S]|_t <= Q}``.

    The first time the trace exceeds ``Q`` becomes a rebalancing time with
    zero position from then on.
    """
    if Q < 0:
        raise DomainError("Q must be non-negative")
    _check_same_path(real, qv)
    tr = qv.trace
    above = np.nonzero(tr > Q)[0]
    if above.size == 0:
        return real
    j = int(above[0])
    if j == 0:
        tau_q = 0.0
    else:
        t0, t1 = qv.grid[j - 1], qv.grid[j]
        a, b = tr[j - 1], tr[j]
        tau_q = float(t0 + (Q - a) / (b - a) * (t1 - t0)) if a < Q else float(t0)
        tau_q = min(max(tau_q, float(t0)), float(t1))
    keep = real.times < tau_q
    times = np.append(real.times[keep], tau_q)
    zero = np.zeros((1,) + real.positions.shape[1:])
    positions = np.concatenate([real.positions[keep], zero])
    return StrategyRealization(times, positions, real.path)


def qv_norm(reals: Sequence[StrategyRealization], qv: QVMatrixPath, t: float) -> float:
    """``|[(G . S)]|_t``: sum of the rows' integral quadratic variations."""
    if len(reals) != qv.dim:
        raise ValidationError(f"expected {qv.dim} rows, got {len(reals)}")
    return float(sum(integral_qv(r, qv, t) for r in reals))


def _stored_times(real: StrategyRealization) -> np.ndarray:
    return np.union1d(real.path.grid, real.times)


def check_admissible(real: StrategyRealization, lam: float) -> AdmissibilityCheck:
    """Is ``(G . S)_t >= -lam`` at every stored time?

    Between stored times the integral is linear, so this is exact.
    """
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    times = _stored_times(real)
    values = integral_path(real, times)
    if values.ndim > 1:
        values = values.min(axis=1)
    k = int(np.argmin(values))
    return AdmissibilityCheck(float(lam), bool(values[k] >= -lam), float(values[k]), float(times[k]))


def combine(a: StrategyRealization, b: StrategyRealization, alpha=1.0, beta=1.0) -> StrategyRealization:
    """``alpha * G + beta * H`` on the joint rebalancing schedule."""
    if a.path is not b.path and a.path != b.path:
        raise ValidationError("strategies live on different paths")
    times = np.union1d(a.times, b.times)
    pos = alpha * a.held_at(times) + beta * b.held_at(times)
    return StrategyRealization(times, pos, a.path)


# built-in rules -----------------------------------------------------------


def buy_and_hold(position) -> StrategyRule:
    g = np.asarray(position, dtype=float)

    def pos(path, times):
        row = g if g.ndim else np.full(path.dim, float(g))
        return np.tile(row, (len(times),) + (1,) * row.ndim)

    return StrategyRule(lambda path: np.empty(0), pos, name="buy_and_hold")


def zero_strategy() -> StrategyRule:
    return StrategyRule(
        lambda path: np.empty(0),
        lambda path, times: np.zeros((len(times), path.dim)),
        name="zero",
    )


def lebesgue_rebalance(level: int, position_of_value: Callable[[np.ndarray], np.ndarray]) -> StrategyRule:
    """Trade at the level-``level`` merged Lebesgue times; the position is a
    function of the current price only."""

    def times(path):
        return merged_partition(path, level).times[1:]

    def pos(path, taus):
        return np.asarray(position_of_value(path.eval(taus)), dtype=float)

    return StrategyRule(times, pos, name=f"lebesgue_rebalance(n={level})")


def grid_rebalance(every: int, position_fn: Callable[[SampledPath, np.ndarray], np.ndarray], name="grid") -> StrategyRule:
    """Trade at every ``every``-th grid time with ``position_fn(path, times)``."""
    if every < 1:
        raise DomainError("every must be >= 1")

    def times(path):
        return path.grid[every::every]

    return StrategyRule(times, position_fn, name=name)


def realization_to_csv(real: StrategyRealization) -> str:
    """``l,tau_l,g_l^1,...,g_l^d`` rows (matrix positions flattened row-major)."""
    flat = real.positions.reshape(len(real.times), -1)
    cols = ["l", "tau_l"] + [f"g_l^{i + 1}" for i in range(flat.shape[1])]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for l, (t, row) in enumerate(zip(real.times, flat)):
        buf.write(",".join([str(l), repr(float(t))] + [repr(float(v)) for v in row]) + "\n")
    return buf.getvalue()
