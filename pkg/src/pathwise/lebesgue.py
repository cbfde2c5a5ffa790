"""Lebesgue partitions: successive times a scalar path moves by ``2**-n``.

For a scalar path ``x`` and ``delta = 2**-n`` the partition starts at 0 and
each next time is the first instant the path sits ``delta`` away from its
value at the previous one.  Every partition value therefore lies on the
lattice ``x(0) + delta * Z``, and the partition is exactly the sequence of
lattice hits with consecutive repeats removed.  On a linear segment those
hits are solved in closed form, so no root finding is involved.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DomainError, PartitionTooLarge, ValidationError
from .paths import SampledPath

__all__ = [
    "Partition",
    "DEFAULT_MAX_TIMES",
    "scalar_partition",
    "coordinate_partition",
    "pair_partition",
    "merged_partition",
    "refine_with",
    "resolution_level",
    "partition_to_csv",
]

DEFAULT_MAX_TIMES = 1 << 23


@dataclass(frozen=True, eq=False)
class Partition:
    """Increasing partition times ``pi_0 = 0 < pi_1 < ...``.

    ``exhausted`` means no further time exists in ``[0, T]``: the remaining
    ``pi_k`` are all ``+inf``.
    """

    level: int
    times: np.ndarray
    exhausted: bool = True

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0 or times[0] != 0.0:
            raise ValidationError("partition times must start at 0")
        if not np.all(np.diff(times) > 0):
            raise ValidationError("partition times must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    def __len__(self):
        return len(self.times)

    @property
    def delta(self) -> float:
        return float(np.ldexp(1.0, -self.level))


def _lattice_hits(times, x, level, max_times):
    """Hit times and lattice indices of ``x`` on ``x[0] + 2**-level * Z``."""
    u = np.ldexp(x - x[0], level)
    ua, ub = u[:-1], u[1:]
    up = ub > ua
    down = ub < ua
    # upward segment hits integers in (ua, ub]; downward ones in [ub, ua)
    first = np.where(up, np.floor(ua) + 1, np.ceil(ua) - 1)
    last = np.where(up, np.floor(ub), np.ceil(ub))
    count = np.where(up, last - first + 1, np.where(down, first - last + 1, 0))
    count = np.maximum(count, 0).astype(np.int64)
    total = int(count.sum())
    if total > max_times:
        raise PartitionTooLarge(
            f"level {level} needs {total} lattice hits (limit {max_times})"
        )
    seg = np.repeat(np.arange(len(ua)), count)
    offs = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
    step = np.where(up, 1.0, -1.0)[seg]
    m = first[seg] + step * offs
    a, b = ua[seg], ub[seg]
    t0, t1 = times[seg], times[seg + 1]
    t = t0 + (m - a) / (b - a) * (t1 - t0)
    t = np.where(m == b, t1, t)
    t = np.where(m == a, t0, t)
    hits_t = np.concatenate([[times[0]], t])
    hits_m = np.concatenate([[0.0], m])
    keep = np.concatenate([[True], hits_m[1:] != hits_m[:-1]])
    return hits_t[keep], hits_m[keep]


def scalar_partition(
    grid: np.ndarray, x: np.ndarray, level: int, max_times: int = DEFAULT_MAX_TIMES
) -> Partition:
    """Level-``level`` Lebesgue partition of the scalar interpolant ``(grid, x)``."""
    if level < 0 or int(level) != level:
        raise DomainError(f"level must be a non-negative integer, got {level!r}")
    t, _ = _lattice_hits(np.asarray(grid, float), np.asarray(x, float), int(level), max_times)
    return Partition(int(level), t, exhausted=True)


def coordinate_partition(
    path: SampledPath, coord: int, level: int, max_times: int = DEFAULT_MAX_TIMES
) -> Partition:
    """Partition generated by coordinate ``coord`` (1-based)."""
    return scalar_partition(path.grid, path.coordinate(coord), level, max_times)


def pair_partition(
    path: SampledPath, coords: tuple[int, int], level: int, max_times: int = DEFAULT_MAX_TIMES
) -> Partition:
    """Partition generated by the sum of two distinct coordinates."""
    i, j = coords
    if i == j:
        raise DomainError("pair partition needs two distinct coordinates")
    x = path.coordinate(i) + path.coordinate(j)
    return scalar_partition(path.grid, x, level, max_times)


def merged_partition(
    path: SampledPath, level: int, max_times: int = DEFAULT_MAX_TIMES
) -> Partition:
    """Union of all coordinate and pair partitions, duplicates collapsed."""
    parts = [coordinate_partition(path, i, level, max_times).times for i in range(1, path.dim + 1)]
    for i, j in combinations(range(1, path.dim + 1), 2):
        parts.append(pair_partition(path, (i, j), level, max_times).times)
    times = np.unique(np.concatenate(parts))
    if len(times) > max_times:
        raise PartitionTooLarge(f"merged level-{level} partition exceeds {max_times} times")
    return Partition(int(level), times, exhausted=True)


def refine_with(partition: Partition, extra_times) -> Partition:
    """Sorted union of the partition with ``extra_times``."""
    extra = np.asarray(extra_times, dtype=float).ravel()
    if np.any(extra < 0) or np.any(~np.isfinite(extra)):
        raise DomainError("extra times must be finite and non-negative")
    if extra.size == 0:
        return partition
    times = np.union1d(partition.times, extra)
    return Partition(partition.level, times, partition.exhausted)


def resolution_level(path: SampledPath) -> int:
    """Finest level at which no grid segment of any coordinate or pair sum
    is split by a crossing: ``2**-n`` is at least the largest grid move."""
    vals = path.values
    moves = [np.abs(np.diff(vals, axis=0)).max()]
    for i, j in combinations(range(path.dim), 2):
        moves.append(np.abs(np.diff(vals[:, i] + vals[:, j])).max())
    biggest = max(moves)
    if biggest == 0.0:
        return 0
    return max(0, int(np.floor(-np.log2(biggest))))


def partition_to_csv(partition: Partition) -> str:
    """``k,time`` rows."""
    buf = io.StringIO()
    buf.write("k,time\n")
    for k, t in enumerate(partition.times):
        buf.write(f"{k},{float(t)!r}\n")
    return buf.getvalue()
