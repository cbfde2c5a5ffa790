"""Sampled continuous paths and adapted processes living on them.

A :class:`SampledPath` is a d-dimensional path known on a finite, strictly
increasing time grid and extended to ``[0, T]`` by linear interpolation.
Every other module works with that interpolant: crossing times, sups and
increments are all exact for it.

Random walks are generated with numpy's ``PCG64`` bit generator
(``numpy.random.Generator(numpy.random.PCG64(seed))``) so fixtures are
reproducible across platforms.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, TextIO

import numpy as np

from .errors import DomainError, ParseError, ValidationError

__all__ = [
    "SampledPath",
    "AdaptedProcess",
    "load_path",
    "save_path",
    "generate_random_walk",
    "increment",
    "running_sup",
    "check_non_anticipating",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _interp(grid, values, t):
    """Piecewise-linear evaluation, exact on grid points (including T)."""
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(grid, t, side="right") - 1
    idx = np.clip(idx, 0, len(grid) - 2)
    t0 = grid[idx]
    t1 = grid[idx + 1]
    w = (t - t0) / (t1 - t0)
    w = w.reshape(w.shape + (1,) * (values.ndim - 1))
    # (1-w)*a + w*b returns a exactly at w=0 and b exactly at w=1
    return (1.0 - w) * values[idx] + w * values[idx + 1]


@dataclass(frozen=True, eq=False)
class SampledPath:
    """A continuous path sampled on ``grid`` with values in R^d.

    Parameters
    ----------
    grid : (N+1,) array
        Strictly increasing times, ``grid[0] == 0``.
    values : (N+1, d) array
        Path values; a 1-d array is read as a scalar path (d = 1).
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = _frozen(self.grid)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        values = _frozen(values)
        if grid.ndim != 1 or len(grid) < 2:
            raise ValidationError("a path needs at least two grid points")
        if values.shape[0] != len(grid) or values.ndim != 2 or values.shape[1] < 1:
            raise ValidationError(
                f"values shape {values.shape} does not match grid of length {len(grid)}"
            )
        if grid[0] != 0.0:
            raise ValidationError(f"grid must start at 0, got {grid[0]!r}")
        if not np.all(np.diff(grid) > 0):
            raise ValidationError("grid times must be strictly increasing")
        if not (np.all(np.isfinite(grid)) and np.all(np.isfinite(values))):
            raise ValidationError("path contains non-finite entries")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1

    def _check_times(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon) or np.any(np.isnan(t)):
            raise DomainError(f"time outside [0, {self.horizon}]")
        return t

    def eval(self, t):
        """Value of the interpolant at ``t`` (scalar -> (d,), array -> (..., d))."""
        t = self._check_times(t)
        return _interp(self.grid, self.values, t)

    def coordinate(self, i: int) -> np.ndarray:
        """Samples of coordinate ``i`` (1-based, as in ``x1..xd``)."""
        if not 1 <= i <= self.dim:
            raise DomainError(f"coordinate {i} out of range 1..{self.dim}")
        return self.values[:, i - 1]

    def refined(self, extra_times: Iterable[float]) -> "SampledPath":
        """Same interpolant, with ``extra_times`` added to the grid."""
        extra = self._check_times(np.fromiter(extra_times, dtype=float))
        if extra.size == 0:
            return self
        grid = np.union1d(self.grid, extra)
        return SampledPath(grid, self.eval(grid))

    def truncate(self, t: float) -> "SampledPath":
        """The prefix of the path on ``[0, t]`` (``t > 0``)."""
        t = float(self._check_times(t))
        if t <= 0.0:
            raise DomainError("prefix horizon must be positive")
        keep = self.grid[self.grid < t]
        grid = np.append(keep, t)
        vals = np.vstack([self.values[: len(keep)], self.eval(t)[None, :]])
        return SampledPath(grid, vals)

    def __eq__(self, other):
        if not isinstance(other, SampledPath):
            return NotImplemented
        return np.array_equal(self.grid, other.grid) and np.array_equal(
            self.values, other.values
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """Values of an adapted process on the grid of a path.

    ``values`` has shape ``(len(grid), m)`` (or ``(len(grid), d, d)`` for
    matrix-valued processes).  Between grid points the process is linear.
    """

    grid: np.ndarray
    values: np.ndarray
    non_anticipating: bool = True

    def __post_init__(self):
        grid = _frozen(self.grid)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != len(grid):
            raise ValidationError("process values and grid differ in length")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def on(cls, path: SampledPath, values, non_anticipating=True):
        return cls(path.grid, values, non_anticipating)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise DomainError(f"time outside [0, {self.horizon}]")
        return _interp(self.grid, self.values, t)

    def norms(self) -> np.ndarray:
        """Euclidean (Frobenius for matrices) norm at each grid point."""
        flat = self.values.reshape(len(self.grid), -1)
        return np.sqrt(np.einsum("ij,ij->i", flat, flat))

    def running_sup(self) -> np.ndarray:
        """``sup_{s <= t_k} |X_s|`` at every grid point."""
        return np.maximum.accumulate(self.norms())


def increment(path: SampledPath, u: float, v: float) -> np.ndarray:
    """``S_v - S_u`` on the interpolant."""
    return path.eval(v) - path.eval(u)


def running_sup(process: AdaptedProcess, t: float) -> float:
    """``sup_{s in [0, t]} |X_s|``.

    On a piecewise-linear process the norm is convex on each segment, so the
    sup is attained at a grid point ``<= t`` or at ``t`` itself.
    """
    t = float(t)
    if t < 0.0 or t > process.horizon:
        raise DomainError(f"time {t} outside [0, {process.horizon}]")
    k = np.searchsorted(process.grid, t, side="right")
    best = float(process.norms()[:k].max())
    end = np.asarray(process.eval(t), dtype=float).ravel()
    return max(best, float(np.sqrt(end @ end)))


def check_non_anticipating(
    compute: Callable[[SampledPath], AdaptedProcess],
    path: SampledPath,
    cut_indices: Iterable[int],
) -> bool:
    """Prefix replay: values recomputed on ``path.truncate(t_k)`` must agree
    bit-exactly with the full computation on ``[0, t_k]``."""
    full = compute(path)
    for k in cut_indices:
        if k < 1:
            continue
        t = path.grid[k]
        part = compute(path.truncate(t))
        n = len(part.grid)
        if not np.array_equal(part.grid, full.grid[:n]):
            return False
        if not np.array_equal(part.values, full.values[:n]):
            return False
    return True


def generate_random_walk(
    seed: int, steps: int, horizon: float = 1.0, dim: int = 1, vol=1.0
) -> SampledPath:
    """Piecewise-linear walk with i.i.d. ``+-vol * sqrt(T/N)`` increments.

    ``vol`` may be a scalar or one value per coordinate.  The walk starts
    at the origin on the uniform grid ``linspace(0, T, N+1)``.
    """
    if int(steps) != steps or steps < 1:
        raise ValidationError(f"steps must be a positive integer, got {steps!r}")
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    vol = np.broadcast_to(np.asarray(vol, dtype=float), (dim,))
    if np.any(vol < 0):
        raise ValidationError("vol must be non-negative")
    rng = np.random.Generator(np.random.PCG64(seed))
    signs = rng.integers(0, 2, size=(steps, dim)) * 2 - 1
    incr = signs * (vol * np.sqrt(horizon / steps))
    values = np.vstack([np.zeros((1, dim)), np.cumsum(incr, axis=0)])
    grid = np.linspace(0.0, horizon, steps + 1)
    return SampledPath(grid, values)


def save_path(path: SampledPath, dest: TextIO | str | None = None) -> str | None:
    """Write ``t,x1,...,xd`` CSV.  ``repr`` floats make the round trip exact."""
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"x{i + 1}" for i in range(path.dim)]) + "\n")
    for t, row in zip(path.grid, path.values):
        buf.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")
    text = buf.getvalue()
    if dest is None:
        return text
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        dest.write(text)
    return None


def load_path(source: TextIO | str) -> SampledPath:
    """Parse the ``t,x1,...,xd`` CSV format.

    ``source`` is an open text stream or the CSV text itself.
    """
    text = source if isinstance(source, str) else source.read()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty input", line=1)
    header = [h.strip() for h in lines[0].split(",")]
    if len(header) < 2 or header[0] != "t":
        raise ParseError("header must be 't,x1,...,xd'", line=1)
    expected = [f"x{i + 1}" for i in range(len(header) - 1)]
    if header[1:] != expected:
        raise ParseError(f"expected columns {expected}, got {header[1:]}", line=1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, got {len(parts)}", line=lineno
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    if len(rows) < 2:
        raise ValidationError("a path file needs at least two rows")
    data = np.array(rows)
    diffs = np.diff(data[:, 0])
    if not np.all(diffs > 0):
        bad = int(np.argmax(~(diffs > 0))) + 3
        raise ValidationError(f"times not strictly increasing at line {bad}")
    return SampledPath(data[:, 0], data[:, 1:])
