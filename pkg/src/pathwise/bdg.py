"""Pathwise Burkholder-Davis-Gundy machinery for p = 1.

Discrete part
    For a real sequence ``x`` the hedge ``f_k = 2 x_k / sqrt([x]_k + (x*_k)^2)``
    (``0/0 := 0``) is adapted, bounded by 2, and satisfies

        x*_N <= 6 sqrt([x]_N) + (f . x)_N            (upper bound)
        sqrt([x]_N) <= 3 x*_N - (f . x)_N / 2        (Davis lower bound)

    for every N.
    The reverse bound ``x*_N >= sqrt([x]_N) + (f . x)_N`` is also checked and
    reported, but it cannot hold for any bounded adapted hedge; see
    :func:`reverse_bound_obstruction`.

Continuous part
    ``Phi^n`` trades ``f_m(x^n_0..x^n_m) G`` just after each time of the
    level-n Lebesgue partition refined by the rebalancing times of ``G``,
    where ``x^n`` is ``(G . S)`` sampled on those times.  Domination of
    ``(G . S)*`` by ``c1 * lam + (Phi^n . S)`` up to the discretisation slack
    ``3 * 2**-n * sqrt(d) * G*`` is verified on every grid time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, PreconditionError, ValidationError
from .lebesgue import merged_partition, refine_with
from .paths import AdaptedProcess, SampledPath
from .quadvar import QVMatrixPath, qv_at_level
from .strategy import (
    StrategyRealization,
    StrategyRule,
    check_admissible,
    integral_path,
    integral_qv,
    integral_qv_path,
    position_sup,
    realize,
)

__all__ = [
    "C1",
    "HEDGE_BOUND",
    "HedgeSequence",
    "BDGReport",
    "DominationReport",
    "MultidimReport",
    "SuperhedgeReport",
    "discrete_stats",
    "hedge_sequence",
    "hedge_gains",
    "verify_pathwise_bdg",
    "reverse_bound_obstruction",
    "build_phi_strategy",
    "build_psi_strategy",
    "verify_domination",
    "multidim_bdg_check",
    "empirical_superhedge_check",
    "FUZZ_KINDS",
    "fuzz_sequence",
    "fuzz_sequences",
]

C1 = 6.0
HEDGE_BOUND = 2.0
_RTOL = 1e-12


def _as_sequence(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("sequence must contain at least one value")
    return x


def discrete_stats(x):
    """Running max of ``|x|`` and ``[x]_m = x_0^2 + sum_{k<m} (x_{k+1}-x_k)^2``."""
    x = _as_sequence(x)
    xstar = np.maximum.accumulate(np.abs(x))
    qv = x[0] ** 2 + np.concatenate([[0.0], np.cumsum(np.diff(x) ** 2)])
    return xstar, qv


@dataclass(frozen=True, eq=False)
class HedgeSequence:
    values: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.values).max())


def hedge_sequence(x) -> HedgeSequence:
    """Adapted hedge ``f_k = 2 x_k / sqrt([x]_k + (x*_k)^2)``, ``|f_k| <= 2``."""
    x = _as_sequence(x)
    xstar, qv = discrete_stats(x)
    den = np.sqrt(qv + xstar**2)
    h = np.divide(x, den, out=np.zeros_like(x), where=den > 0)
    # |x_k| <= x*_k <= den, but keep rounding from pushing past the bound
    f = np.clip(HEDGE_BOUND * h, -HEDGE_BOUND, HEDGE_BOUND)
    return HedgeSequence(f)


def hedge_gains(f, x) -> np.ndarray:
    """``(f . x)_m = sum_{k<m} f_k (x_{k+1} - x_k)`` for every m."""
    f = np.asarray(f.values if isinstance(f, HedgeSequence) else f, dtype=float)
    x = _as_sequence(x)
    return np.concatenate([[0.0], np.cumsum(f[:-1] * np.diff(x))])


@dataclass(frozen=True)
class BDGReport:
    upper_ok: bool
    lower_ok: bool
    davis_lower_ok: bool
    hedge_bounded: bool
    upper_margin: float
    lower_margin: float
    davis_lower_margin: float
    worst_upper_index: int
    worst_lower_index: int


def verify_pathwise_bdg(x, c1: float = C1, all_prefixes: bool = True) -> BDGReport:
    """Check the discrete inequalities for the hedge of ``x``.

    Margins are ``rhs - lhs`` (non-negative when the inequality holds).  With
    ``all_prefixes`` every ``N`` up to ``len(x) - 1`` is checked, otherwise
    only the last.
    """
    x = _as_sequence(x)
    f = hedge_sequence(x)
    xstar, qv = discrete_stats(x)
    gains = hedge_gains(f, x)
    root = np.sqrt(qv)
    if not all_prefixes:
        xstar, root, gains = xstar[-1:], root[-1:], gains[-1:]
    scale = xstar + root + np.abs(gains)
    tol = _RTOL * np.maximum(scale, 1.0)
    upper = c1 * root + gains - xstar
    lower = xstar - root - gains
    davis = 3.0 * xstar - 0.5 * gains - root
    iu, il, idv = int(np.argmin(upper + tol)), int(np.argmin(lower + tol)), int(np.argmin(davis + tol))
    offset = 0 if all_prefixes else len(x) - 1
    return BDGReport(
        upper_ok=bool(np.all(upper >= -tol)),
        lower_ok=bool(np.all(lower >= -tol)),
        davis_lower_ok=bool(np.all(davis >= -tol)),
        hedge_bounded=f.max_abs <= HEDGE_BOUND,
        upper_margin=float(upper[iu]),
        lower_margin=float(lower[il]),
        davis_lower_margin=float(davis[idv]),
        worst_upper_index=iu + offset,
        worst_lower_index=il + offset,
    )


def reverse_bound_obstruction(bound: float = HEDGE_BOUND, big: float = 1e6):
    """Two one-step sequences from ``x_0 = 1`` that no hedge ``|f_0| <= bound``
    can both satisfy ``x*_1 >= sqrt([x]_1) + f_0 (x_1 - x_0)`` on.

    Moving down by 2 forces ``f_0 >= (sqrt(5) - 1) / 2``; moving up by
    ``big`` forces ``f_0 <= (1 + big - sqrt(1 + big**2)) / big``.  Returns
    ``(required_min, allowed_max)``; the reverse bound is infeasible for
    every adapted hedge whenever ``required_min > allowed_max``.
    """
    down = np.array([1.0, -1.0])
    up = np.array([1.0, 1.0 + big])
    xs, qv = discrete_stats(down)
    required_min = (math.sqrt(qv[-1]) - xs[-1]) / abs(down[1] - down[0])
    xs, qv = discrete_stats(up)
    allowed_max = (xs[-1] - math.sqrt(qv[-1])) / (up[1] - up[0])
    return float(required_min), float(allowed_max)


FUZZ_KINDS = ("walk", "zigzag", "spike", "drawdown", "heavy")


def fuzz_sequence(rng: np.random.Generator, length: int, kind: str) -> np.ndarray:
    """One test sequence of ``length`` points for the discrete sweeps.

    ``walk``: Gaussian random walk from a random start.  ``zigzag``:
    alternating moves of growing amplitude.  ``spike``: flat, one large
    jump, flat.  ``drawdown``: rise to a peak then fall through zero.
    ``heavy``: Cauchy increments.
    """
    if length < 1:
        raise DomainError("length must be >= 1")
    n = length - 1
    x0 = rng.normal()
    if kind == "walk":
        steps = rng.normal(size=n) * rng.uniform(0.01, 10)
    elif kind == "zigzag":
        signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        steps = signs * (1 + np.arange(n)) * rng.uniform(0.1, 2)
    elif kind == "spike":
        steps = np.zeros(n)
        if n:
            steps[rng.integers(n)] = rng.choice([-1.0, 1.0]) * 10 ** rng.uniform(-3, 6)
    elif kind == "drawdown":
        k = n // 2
        steps = np.concatenate([np.full(k, rng.uniform(0.1, 3)), np.full(n - k, -rng.uniform(0.1, 6))])
    elif kind == "heavy":
        steps = rng.standard_cauchy(size=n)
    else:
        raise DomainError(f"unknown sequence kind {kind!r}")
    return x0 + np.concatenate([[0.0], np.cumsum(steps)])


def fuzz_sequences(seed: int, count: int, max_len: int = 1000):
    """``count`` seeded sequences, lengths uniform in ``[1, max_len]``, cycling
    through :data:`FUZZ_KINDS`."""
    rng = np.random.Generator(np.random.PCG64(seed))
    for i in range(count):
        yield fuzz_sequence(rng, int(rng.integers(1, max_len + 1)), FUZZ_KINDS[i % len(FUZZ_KINDS)])


# --------------------------------------------------------------------------
# continuous-time strategies
# --------------------------------------------------------------------------


def _as_realization(G, path: SampledPath) -> StrategyRealization:
    if isinstance(G, StrategyRealization):
        if G.path is not path and G.path != path:
            raise ValidationError("strategy realized on a different path")
        return G
    if isinstance(G, StrategyRule):
        return realize(G, path)
    raise TypeError(f"expected StrategyRule or StrategyRealization, got {type(G).__name__}")


@dataclass(frozen=True, eq=False)
class PhiConstruction:
    """``Phi^n`` together with the discrete data it was built from."""

    phi: StrategyRealization
    sigma: np.ndarray
    x: np.ndarray
    hedge: HedgeSequence


def build_phi_strategy(G, path: SampledPath, level: int) -> PhiConstruction:
    """Positions ``Phi_m = f_m(x_0..x_m) G_{sigma_m+}`` at the refined times ``sigma_m``.

    ``G_{sigma_m+}`` is the position held on ``(sigma_m, sigma_{m+1}]``, so
    ``x_m = (G . S)_{sigma_m}`` exactly.
    """
    real = _as_realization(G, path)
    sigma = refine_with(merged_partition(path, level), real.times).times
    sigma = sigma[sigma <= path.horizon]
    g = real.held_at(sigma)
    S = path.eval(sigma)
    step = np.einsum("md,md->m", g[:-1], np.diff(S, axis=0))
    x = np.concatenate([[0.0], np.cumsum(step)])
    f = hedge_sequence(x)
    phi = StrategyRealization(sigma, f.values[:, None] * g, path)
    return PhiConstruction(phi, sigma, x, f)


def _first_nonpositive_time(times, values) -> float | None:
    bad = np.nonzero(values <= 0)[0]
    if bad.size == 0:
        return None
    j = int(bad[0])
    if j == 0:
        return float(times[0])
    a, b = values[j - 1], values[j]
    t0, t1 = times[j - 1], times[j]
    return float(t0 + a / (a - b) * (t1 - t0))


def build_psi_strategy(G, path: SampledPath, level: int, capital: float) -> StrategyRealization:
    """``Phi^n`` stopped the first time ``capital + (Phi^n . S)`` reaches 0.

    The stopped strategy is ``capital``-admissible by construction.
    """
    phi = build_phi_strategy(G, path, level).phi
    times = np.union1d(path.grid, phi.times)
    rho = _first_nonpositive_time(times, capital + integral_path(phi, times))
    if rho is None:
        return phi
    keep = phi.times < rho
    zero = np.zeros((1, path.dim))
    return StrategyRealization(
        np.append(phi.times[keep], rho), np.concatenate([phi.positions[keep], zero]), path
    )


@dataclass
class DominationReport:
    """Margins of ``c1*lam + (Psi^n . S)_tau - (G . S)*_tau`` on the grid.

    ``passed`` iff every margin is at least ``-slack`` where ``slack`` is
    ``3 * 2**-n * sqrt(d) * G*_tau``.
    """

    path_id: object
    level: int
    lam: float
    c1: float
    times: np.ndarray
    margins: np.ndarray
    slack: np.ndarray
    passed: bool
    required_lam: float
    rho_time: float | None = None
    qv_gap: float = 0.0

    @property
    def worst(self) -> float:
        return float((self.margins + self.slack).min())

    def summary(self) -> dict:
        k = int(np.argmin(self.margins + self.slack))
        return {
            "path_id": self.path_id,
            "level": self.level,
            "lambda": self.lam,
            "required_lambda": self.required_lam,
            "c1": self.c1,
            "passed": self.passed,
            "worst_margin_with_slack": float(self.margins[k] + self.slack[k]),
            "worst_time": float(self.times[k]),
            "rho_time": self.rho_time,
            "qv_gap": self.qv_gap,
        }


def verify_domination(
    G,
    path: SampledPath,
    level: int,
    lam: float,
    c1: float = C1,
    qv: QVMatrixPath | None = None,
    path_id=None,
) -> DominationReport:
    """Finite-level domination check with constant capital ``lam``.

    ``lam`` must be at least ``sqrt([(G . S)]_T)`` computed from ``qv``
    (level-``level`` covariation by default).
    """
    real = _as_realization(G, path)
    if qv is None:
        qv = qv_at_level(path, level)
    required = math.sqrt(max(integral_qv(real, qv, path.horizon), 0.0))
    if lam < required * (1 - 1e-12) - 1e-300:
        raise PreconditionError(
            f"lambda={lam!r} is below the required sqrt([(G.S)]_T)={required!r}"
        )
    con = build_phi_strategy(real, path, level)
    times = np.union1d(path.grid, con.sigma)
    gs = integral_path(real, times)
    gs_star = np.maximum.accumulate(np.abs(gs))
    phi_gains = integral_path(con.phi, times)
    slack = 3.0 * np.ldexp(1.0, -level) * math.sqrt(path.dim) * position_sup(real, times)
    margins = c1 * lam + phi_gains - gs_star
    tol = _RTOL * np.maximum(1.0, c1 * lam + np.abs(phi_gains) + gs_star)
    passed = bool(np.all(margins + slack >= -tol))
    rho = _first_nonpositive_time(times, c1 * lam + phi_gains)
    # gap between sqrt of the continuous and the discrete integral QV
    cont = np.sqrt(np.maximum(integral_qv_path(real, qv, con.sigma), 0.0))
    disc = np.sqrt(discrete_stats(con.x)[1])
    return DominationReport(
        path_id, int(level), float(lam), float(c1), times, margins, slack, passed,
        required, rho, float(np.abs(cont - disc).max()),
    )


@dataclass
class MultidimReport:
    passed: bool
    triangle_ok: bool
    rows: list
    lam: float
    c1: float
    bound_constant: float
    worst_margin: float


def multidim_bdg_check(
    rows: Sequence[StrategyRealization],
    qv: QVMatrixPath,
    lam: float,
    level: int,
    c1: float = C1,
) -> MultidimReport:
    """Matrix-valued version: per-row domination plus the triangle step.

    Checks ``|(G . S)_t|`` against ``sum_i (G^i . S)*_t`` on the grid and runs
    :func:`verify_domination` for every row with the same ``lam``.  The
    summed capital is ``c1 * d * lam``.
    """
    if len(rows) != qv.dim:
        raise ValidationError(f"expected {qv.dim} rows, got {len(rows)}")
    path = rows[0].path
    required = math.sqrt(max(sum(integral_qv(r, qv, path.horizon) for r in rows), 0.0))
    if lam < required * (1 - 1e-12):
        raise PreconditionError(f"lambda={lam!r} is below sqrt(|[(G.S)]|_T)={required!r}")
    reports = [verify_domination(r, path, level, lam, c1, qv=qv, path_id=i) for i, r in enumerate(rows)]
    times = path.grid
    vec = np.stack([integral_path(r, times) for r in rows], axis=1)
    norm_star = np.maximum.accumulate(np.sqrt(np.einsum("ti,ti->t", vec, vec)))
    row_star = np.maximum.accumulate(np.abs(vec), axis=0).sum(axis=1)
    triangle_ok = bool(np.all(norm_star <= row_star * (1 + 1e-12) + 1e-300))
    worst = min(rep.worst for rep in reports)
    return MultidimReport(
        passed=triangle_ok and all(r.passed for r in reports),
        triangle_ok=triangle_ok,
        rows=reports,
        lam=float(lam),
        c1=float(c1),
        bound_constant=float(c1 * len(rows)),
        worst_margin=worst,
    )


@dataclass
class SuperhedgeReport:
    passed: bool
    lam: float
    per_path: list = field(default_factory=list)


def empirical_superhedge_check(
    payoffs: Sequence[AdaptedProcess],
    ensemble: Sequence[SampledPath],
    strategy_seq: Sequence,
    lam: float,
) -> SuperhedgeReport:
    """Does ``lam + (H^n . S)_tau`` dominate ``Z_tau`` on the ensemble?

    ``strategy_seq`` lists the strategies ``H^1, H^2, ...`` as rules or as
    callables ``path -> StrategyRealization``.  For every path and grid time
    the report holds the smallest margin over the sequence; the path passes
    when every strategy is ``lam``-admissible and the last strategy's
    margins are all non-negative.  This verifies domination on the
    supplied paths only; it does not compute an infimum over strategies.
    """
    if len(payoffs) != len(ensemble):
        raise ValidationError("one payoff process per path is required")
    out = []
    all_ok = True
    for pid, (Z, path) in enumerate(zip(payoffs, ensemble)):
        if not np.array_equal(Z.grid, path.grid):
            raise ValidationError(f"payoff {pid} is not sampled on its path's grid")
        z = Z.values[:, 0]
        margins = []
        admissible = []
        for H in strategy_seq:
            real = H(path) if callable(H) and not isinstance(H, StrategyRule) else _as_realization(H, path)
            chk = check_admissible(real, lam)
            admissible.append(chk.admissible)
            margins.append(lam + integral_path(real, path.grid) - z)
        margins = np.array(margins)
        tol = _RTOL * np.maximum(1.0, np.abs(z) + lam)
        last_ok = bool(np.all(margins[-1] >= -tol)) if len(margins) else bool(np.all(lam - z >= -tol))
        ok = last_ok and all(admissible)
        all_ok &= ok
        out.append(
            {
                "path_id": pid,
                "passed": ok,
                "admissible": admissible,
                "min_margin_per_strategy": [float(m.min()) for m in margins],
                "min_margin_over_sequence": margins.min(axis=0) if len(margins) else lam - z,
            }
        )
    return SuperhedgeReport(all_ok, float(lam), out)
