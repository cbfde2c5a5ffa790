"""Quadratic covariation along Lebesgue partitions.

``qv_level`` evaluates the level-n sum of increment products verbatim,
including the partial last term ``S_{pi_k, t}``.  ``QVMatrixPath`` stores a
monotone version of the same object: exact level-n sums at the partition
times (and at T), linear in between.  The partial term of the verbatim sum
can shrink inside a partition interval; the stored version cannot, which
keeps every increment positive semidefinite.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PartitionTooLarge, ValidationError
from .lebesgue import DEFAULT_MAX_TIMES, Partition, merged_partition, resolution_level
from .paths import SampledPath

__all__ = [
    "QVMatrixPath",
    "LevelSums",
    "level_sums",
    "qv_level",
    "qv_at_level",
    "qv",
    "qv_trace",
    "level_distances",
    "qv_to_csv",
]

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4
DEFAULT_N_MAX = 20
# the level search stops once a partition would exceed this many times
SEARCH_MAX_TIMES = 1 << 21


@dataclass(frozen=True, eq=False)
class LevelSums:
    """Cumulative outer products of path increments along one partition."""

    path: SampledPath
    partition: Partition
    knot_values: np.ndarray  # (K, d) path values at partition times
    cumulative: np.ndarray  # (K, d, d) sums over completed intervals

    def evaluate(self, t) -> np.ndarray:
        """Verbatim level sum at time(s) ``t``: completed terms + partial term."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.partition.times, t, side="right") - 1
        r = self.path.eval(t) - self.knot_values[k]
        return self.cumulative[k] + r[..., :, None] * r[..., None, :]

    def monotone(self, t) -> np.ndarray:
        """Completed sums linearly interpolated between partition times.

        The last knot is T, closing the final interval with the tail
        increment from the last partition time.
        """
        t = np.asarray(t, dtype=float)
        T = self.path.horizon
        knots = self.partition.times
        cum = self.cumulative
        if knots[-1] < T:
            r = self.path.eval(T) - self.knot_values[-1]
            knots = np.append(knots, T)
            cum = np.concatenate([cum, (cum[-1] + np.outer(r, r))[None]], axis=0)
        d = self.path.dim
        flat = cum.reshape(len(knots), d * d)
        out = np.empty(t.shape + (d * d,))
        for c in range(d * d):
            out[..., c] = np.interp(t, knots, flat[:, c])
        return out.reshape(t.shape + (d, d))


def level_sums(path: SampledPath, level: int, max_times: int = DEFAULT_MAX_TIMES) -> LevelSums:
    part = merged_partition(path, level, max_times)
    vals = path.eval(part.times)
    inc = np.diff(vals, axis=0)
    outer = inc[:, :, None] * inc[:, None, :]
    cum = np.concatenate([np.zeros((1, path.dim, path.dim)), np.cumsum(outer, axis=0)])
    return LevelSums(path, part, vals, cum)


def qv_level(path: SampledPath, level: int, t: float) -> np.ndarray:
    """Level-``level`` covariation matrix at time ``t``.

    Sum over the merged partition of ``S^i_{pi_k ^ t, pi_{k+1} ^ t} *
    S^j_{pi_k ^ t, pi_{k+1} ^ t}``, starting from the first interval.
    """
    if level < 0:
        raise DomainError("level must be non-negative")
    return level_sums(path, level).evaluate(t)


@dataclass(frozen=True, eq=False)
class QVMatrixPath:
    """Symmetric d x d covariation matrices sampled on ``grid``.

    Attributes
    ----------
    level_used : int
        Lebesgue level the matrices come from.
    converged : bool
        False when the successive-level criterion was not met.
    distances : dict
        Uniform distance between level n and n+1, per level examined.
    """

    grid: np.ndarray
    matrices: np.ndarray
    level_used: int
    converged: bool = True
    distances: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1] != m.shape[2] or m.shape[0] != len(self.grid):
            raise ValidationError("matrices must have shape (len(grid), d, d)")
        g = np.array(self.grid, dtype=float)
        g.setflags(write=False)
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "matrices", m)

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def trace(self) -> np.ndarray:
        return np.trace(self.matrices, axis1=1, axis2=2)

    def at(self, t) -> np.ndarray:
        """Matrices at ``t``, linear between stored samples."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon):
            raise DomainError(f"time outside [0, {self.horizon}]")
        d = self.dim
        flat = self.matrices.reshape(len(self.grid), d * d)
        out = np.empty(t.shape + (d * d,))
        for c in range(d * d):
            out[..., c] = np.interp(t, self.grid, flat[:, c])
        return out.reshape(t.shape + (d, d))


def qv_at_level(path: SampledPath, level: int, max_times: int = DEFAULT_MAX_TIMES) -> QVMatrixPath:
    """Monotone level-``level`` covariation on path grid joined with partition times."""
    sums = level_sums(path, level, max_times)
    grid = np.union1d(path.grid, sums.partition.times)
    return QVMatrixPath(grid, sums.monotone(grid), level_used=int(level))


def _uniform_distance(a: LevelSums, b: LevelSums) -> float:
    grid = np.union1d(np.union1d(a.path.grid, a.partition.times), b.partition.times)
    return float(np.abs(a.evaluate(grid) - b.evaluate(grid)).max())


def qv(
    path: SampledPath,
    tol: float = DEFAULT_TOL,
    n_max: int = DEFAULT_N_MAX,
    max_times: int = SEARCH_MAX_TIMES,
) -> QVMatrixPath:
    """Raise the level until successive levels are uniformly ``tol``-close.

    The first ``n`` with ``sup_t |Q_n(t) - Q_{n+1}(t)| < tol`` is used.  If
    none exists up to ``n_max`` (or partitions outgrow ``max_times``) the
    level with the smallest successive distance among those no finer than
    :func:`~pathwise.lebesgue.resolution_level` is returned with
    ``converged=False``.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    distances = {}
    prev = level_sums(path, 0, max_times)
    chosen = None
    for n in range(0, n_max):
        try:
            nxt = level_sums(path, n + 1, max_times)
        except PartitionTooLarge as exc:
            logger.info("qv: stopping level search at %d (%s)", n, exc)
            break
        distances[n] = _uniform_distance(prev, nxt)
        if distances[n] < tol:
            chosen = n
            break
        prev = nxt
    converged = chosen is not None
    if not converged:
        # below the sampling resolution the sums only see the interpolant,
        # whose covariation vanishes; prefer levels the samples resolve
        res = resolution_level(path)
        pool = {n: v for n, v in distances.items() if n <= res} or distances
        chosen = min(pool, key=pool.get) if pool else 0
        logger.info("qv: tol %g not met, using level %d", tol, chosen)
    out = qv_at_level(path, chosen, max_times)
    return QVMatrixPath(out.grid, out.matrices, chosen, converged, distances)


def level_distances(path: SampledPath, levels, max_times: int = DEFAULT_MAX_TIMES) -> dict:
    """``{n: sup_t |Q_n(t) - Q_{n+1}(t)|}`` for each requested level."""
    out = {}
    cache = {}

    def sums(n):
        if n not in cache:
            cache[n] = level_sums(path, n, max_times)
        return cache[n]

    for n in sorted(set(int(v) for v in levels)):
        if n < 0:
            raise DomainError("levels must be non-negative")
        out[n] = _uniform_distance(sums(n), sums(n + 1))
        cache.pop(n - 1, None)
    return out


def qv_trace(qv_path: QVMatrixPath, t: float) -> float:
    """``|[S]|_t``: trace of the covariation matrix at ``t``."""
    t = float(t)
    if t < 0 or t > qv_path.horizon:
        raise DomainError(f"time {t} outside [0, {qv_path.horizon}]")
    return float(np.interp(t, qv_path.grid, qv_path.trace))


def qv_to_csv(qv_path: QVMatrixPath) -> str:
    """``t,q_11,q_12,...,q_dd,trace`` rows."""
    d = qv_path.dim
    cols = ["t"] + [f"q_{i + 1}{j + 1}" for i in range(d) for j in range(d)] + ["trace"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    flat = qv_path.matrices.reshape(len(qv_path.grid), d * d)
    for t, row, tr in zip(qv_path.grid, flat, qv_path.trace):
        buf.write(",".join(repr(float(v)) for v in (t, *row, tr)) + "\n")
    return buf.getvalue()
