"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion.  Criteria that cannot be met are run as
stated under ``xfail(strict=True)`` so they show as FAIL in the summary
without turning the suite red, and start failing loudly if they ever pass.
"""

import json
import math
import time

import numpy as np
import pytest

from oracles import crossing_times, hand_paths
from pathwise.bdg import C1, fuzz_sequences, hedge_sequence, verify_domination, verify_pathwise_bdg
from pathwise.cli import main
from pathwise.lebesgue import resolution_level, scalar_partition
from pathwise.paths import SampledPath, generate_random_walk
from pathwise.quadvar import qv_at_level, qv_level
from pathwise.sde import (
    DriftProcess,
    SDEProblem,
    black_scholes_exact,
    constant_diffusion,
    covering_violations,
    linear_diffusion,
    linear_drift,
    running_max_drift,
    solve,
    solve_direct,
    window_thresholds,
    working_grid,
)
from pathwise.strategy import (
    grid_rebalance,
    integral_qv,
    integral_qv_path,
    position_sup,
    realize,
    truncate,
)

SIGMAS = (0.0, 0.3, 1.0)
SIZES = (2**12, 2**14, 2**16)
SEEDS = (0, 1, 2)


def bs_problem(sigma):
    return SDEProblem([1.0], linear_drift(1.0), linear_diffusion(sigma), DriftProcess.linear(1.0, 0.1))


def random_rule(rng, every):
    return grid_rebalance(every, lambda p, t: rng.uniform(-1.0, 1.0, size=(len(t), p.dim)))


@pytest.fixture(scope="module")
def bs_runs():
    """Every Black-Scholes solve of criterion 7, shared with 6, 8 and 9."""
    runs = {}
    t0 = time.perf_counter()
    for sigma in SIGMAS:
        prob = bs_problem(sigma)
        for seed in SEEDS:
            for n in SIZES:
                path = generate_random_walk(seed, n)
                sol = solve(prob, path)
                direct = solve_direct(prob, path)
                qv = qv_at_level(path, resolution_level(path))
                bs = black_scholes_exact(1.0, sigma, prob.drift, path, qv, times=sol.X.grid).values[:, 0]
                runs[sigma, seed, n] = (prob, path, sol, direct, bs)
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def extra_runs():
    """Path-dependent and multi-dimensional problems for 6, 8 and 9."""
    out = []
    cases = [
        ("running_max", [1.0], running_max_drift(0.8), linear_diffusion(0.5), 1, DriftProcess.linear(1.0, 0.3, 0.2)),
        ("unit_L", [1.0], linear_drift(0.5), linear_diffusion(0.5), 1, DriftProcess.linear(1.0, 0.2)),
        ("two_dim", [1.0, -0.5], running_max_drift(0.4),
         constant_diffusion([[0.3, 0.1], [0.0, 0.2]]), 2, DriftProcess.linear(1.0, 0.5, 0.5)),
    ]
    for name, x0, K, F, d, drift in cases:
        prob = SDEProblem(x0, K, F, drift)
        for seed in (0, 1):
            path = generate_random_walk(seed, 4096, dim=d)
            out.append((name, prob, path, solve(prob, path)))
    return out


# 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1, "Lebesgue partition exactness")
def test_partition_exactness(record_property):
    cases = hand_paths()
    assert len(cases) == 20
    assert any(name == "five_thirds" for name, *_ in cases)
    worst_time, worst_inc, elapsed = 0.0, 0.0, 0.0
    for _, grid, values, level in cases:
        g, x = np.asarray(grid, float), np.asarray(values, float)
        t0 = time.perf_counter()
        times = scalar_partition(g, x, level).times
        elapsed += time.perf_counter() - t0
        want = np.array([float(t) for t in crossing_times(grid, values, level)])
        assert times.shape == want.shape
        worst_time = max(worst_time, float(np.abs(times - want).max()))
        inc = np.abs(np.diff(np.interp(times, g, x)))
        if inc.size:
            worst_inc = max(worst_inc, float(np.abs(inc - 2.0**-level).max()))
    record_property("detail", f"time err {worst_time:.1e}, increment err {worst_inc:.1e}, {elapsed:.3f}s")
    assert worst_time <= 1e-12 and worst_inc <= 1e-12
    assert elapsed < 1.0


# 2 -------------------------------------------------------------------------


@pytest.mark.criterion(2, "QV sanity")
def test_qv_linear_path_exact(record_property):
    g = np.array([0.0, 1.0])
    p = SampledPath(g, g[:, None])
    for n in range(21):
        assert qv_level(p, n, 1.0)[0, 0] == 2.0**-n


@pytest.mark.criterion(2, "QV sanity")
@pytest.mark.xfail(strict=True, reason="level 10 is finer than the 2**-8 walk step; the sum is 0.25 on every path")
def test_qv_random_walks_level_ten(record_property):
    t0 = time.perf_counter()
    traces = [qv_at_level(generate_random_walk(seed, 2**16), 10).trace[-1] for seed in range(100)]
    elapsed = time.perf_counter() - t0
    hits = sum(abs(q - 1.0) <= 0.1 for q in traces)
    record_property("detail", f"{hits}/100 within 0.1 at n=10 (median {np.median(traces):.3f}), {elapsed:.1f}s")
    assert elapsed < 60
    assert hits >= 95


def test_qv_random_walks_at_resolution_level():
    # the same ensemble at levels the samples resolve
    for level in (6, 7, 8):
        traces = [qv_at_level(generate_random_walk(seed, 2**16), level).trace[-1] for seed in range(100)]
        assert sum(abs(q - 1.0) <= 0.1 for q in traces) >= 95


# 3 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fuzz_reports():
    t0 = time.perf_counter()
    reports, max_f, lengths = [], 0.0, set()
    for x in fuzz_sequences(2024, 10**4, 1000):
        reports.append(verify_pathwise_bdg(x))
        max_f = max(max_f, hedge_sequence(x).max_abs)
        lengths.add(len(x))
    return reports, max_f, lengths, time.perf_counter() - t0


@pytest.mark.criterion(3, "pathwise BDG fuzzing")
def test_bdg_upper_and_hedge_bound(fuzz_reports, record_property):
    reports, max_f, lengths, elapsed = fuzz_reports
    bad = sum(not r.upper_ok for r in reports)
    record_property("detail", f"upper violations {bad}, max|f| {max_f:.3f}, {elapsed:.1f}s")
    assert min(lengths) == 1 and max(lengths) == 1000
    assert bad == 0
    assert max_f <= 2.0
    assert elapsed < 30


@pytest.mark.criterion(3, "pathwise BDG fuzzing")
@pytest.mark.xfail(strict=True, reason="the reverse bound cannot hold for a bounded adapted hedge")
def test_bdg_reverse_bound(fuzz_reports, record_property):
    reports = fuzz_reports[0]
    bad = sum(not r.lower_ok for r in reports)
    record_property("detail", f"reverse violations {bad}/{len(reports)}")
    assert bad == 0


# 4 -------------------------------------------------------------------------


@pytest.mark.criterion(4, "truncated-strategy QV bound")
def test_truncated_qv_bound(record_property):
    rng = np.random.Generator(np.random.PCG64(77))
    t0 = time.perf_counter()
    violations = 0
    for k in range(1000):
        d = int(rng.integers(1, 4))
        path = generate_random_walk(int(rng.integers(2**31)), 128, dim=d, vol=rng.uniform(0.2, 2))
        qv = qv_at_level(path, resolution_level(path))
        real = realize(random_rule(rng, int(rng.integers(1, 20))), path)
        Q = float(rng.uniform(0, 1.2) * qv.trace[-1])
        trunc = truncate(real, Q, qv)
        ts = path.grid
        lhs = integral_qv_path(trunc, qv, ts)
        rhs = d * position_sup(real, ts) ** 2 * Q
        violations += int(np.any(lhs > rhs * (1 + 1e-12) + 1e-15))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{violations} violations in 1000 triples, {elapsed:.1f}s")
    assert violations == 0
    assert elapsed < 30


# 5 -------------------------------------------------------------------------


@pytest.mark.criterion(5, "finite-level domination")
def test_domination(record_property):
    rng = np.random.Generator(np.random.PCG64(5))
    t0 = time.perf_counter()
    passed, worst = 0, math.inf
    for seed in range(100):
        path = generate_random_walk(seed, 4096)
        real = realize(random_rule(rng, int(rng.integers(1, 64))), path)
        qv = qv_at_level(path, 12)
        lam = math.sqrt(integral_qv(real, qv, path.horizon))
        rep = verify_domination(real, path, 12, lam, c1=C1, qv=qv)
        passed += rep.passed
        worst = min(worst, rep.worst)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{passed}/100 passed, worst margin {worst:.3g}, {elapsed:.1f}s")
    assert passed == 100
    assert elapsed < 120


# 6 -------------------------------------------------------------------------


@pytest.mark.criterion(6, "Picard stabilisation")
def test_picard_stabilisation(bs_runs, extra_runs, record_property):
    windows = [w for (_, _, sol, _, _) in bs_runs[0].values() for w in sol.windows]
    windows += [w for (*_, sol) in extra_runs for w in sol.windows]
    over = sum(w.iterations > w.size for w in windows)
    unstable = sum(not w.stabilization_ok for w in windows)
    record_property("detail", f"{len(windows)} windows, max iterations {max(w.iterations for w in windows)}")
    assert over == 0 and unstable == 0
    assert all(w.converged for w in windows)


# 7 -------------------------------------------------------------------------


@pytest.mark.criterion(7, "Black-Scholes oracle")
def test_black_scholes_oracle(bs_runs, record_property):
    runs, elapsed = bs_runs
    worst_ratio, worst_direct = 0.0, 0.0
    for sigma in SIGMAS:
        for seed in SEEDS:
            gaps = []
            for n in SIZES:
                _, _, sol, direct, bs = runs[sigma, seed, n]
                gaps.append(float(np.max(np.abs(sol.X.values[:, 0] - bs) / np.abs(bs))))
                worst_direct = max(worst_direct, float(np.abs(sol.X.values - direct.X.values).max()))
            ratios = [b / a for a, b in zip(gaps, gaps[1:])]
            worst_ratio = max(worst_ratio, *ratios)
    record_property("detail", f"worst ratio {worst_ratio:.3f}, solve-direct gap {worst_direct:.1e}, {elapsed:.1f}s")
    assert worst_ratio <= 0.7
    assert worst_direct < 1e-10
    assert elapsed < 120


# 8 -------------------------------------------------------------------------


@pytest.mark.criterion(8, "window accounting")
def test_window_accounting(bs_runs, extra_runs, record_property):
    assert window_thresholds(1.0, 1, 6.0) == (1 / 144, 1 / 3)
    runs = [(prob, path, sol) for (prob, path, sol, _, _) in bs_runs[0].values()]
    runs += [(prob, path, sol) for (_, prob, path, sol) in extra_runs]
    closed = 0
    for prob, path, sol in runs:
        a = 0 if math.isinf(sol.r) else math.floor(prob.drift.bound / sol.r)
        b = 0 if math.isinf(sol.q) else math.floor(sol.qv_total / sol.q)
        assert sol.closed_windows <= a + b + 2
        wg = working_grid(prob, path)
        assert list(wg.thetas) == sol.thetas
        clock = lambda t: np.interp(t, wg.times, wg.clock)
        assert covering_violations(sol.thetas, clock, prob.drift.variation, sol.q, sol.r) == []
        closed += sol.closed_windows
    record_property("detail", f"{len(runs)} runs, {closed} closed windows")


# 9 -------------------------------------------------------------------------


@pytest.mark.criterion(9, "uniqueness surrogate")
def test_uniqueness(bs_runs, extra_runs, record_property):
    worst = 0.0
    guess = lambda times, x: x * (1 + np.sin(40 * times))[:, None] - 3.0
    pairs = [(prob, path, sol) for (prob, path, sol, _, _) in bs_runs[0].values() if len(path.grid) <= 2**14 + 1]
    pairs += [(prob, path, sol) for (_, prob, path, sol) in extra_runs]
    for prob, path, sol in pairs:
        other = solve(prob, path, initial=guess)
        worst = max(worst, float(np.abs(other.X.values - sol.X.values).max()))
    record_property("detail", f"{len(pairs)} problems, worst sup distance {worst:.1e}")
    assert worst < 1e-10


# 10 ------------------------------------------------------------------------


@pytest.mark.criterion(10, "determinism")
def test_cli_determinism(tmp_path, capsys, record_property):
    prob = tmp_path / "bs.json"
    prob.write_text(json.dumps({"model": "black_scholes", "x0": 1.0, "sigma": 0.3, "drift": {"up_rate": 0.1}}))
    outputs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        d.mkdir()
        codes = [
            main(["gen", "--seed", "42", "--steps", "2048", "--output", str(d / "path.csv")]),
            main(["gen", "--seed", "42", "--steps", "256", "--ensemble", "3", "--output", str(d / "ens")]),
            main(["qv", "--input", str(d / "path.csv"), "--output", str(d / "qv.csv"), "--table", str(d / "table.csv")]),
            main(["solve", "--problem", str(prob), "--input", str(d / "path.csv"), "--oracle", "bs",
                  "--output", str(d / "sol.csv"), "--report", str(d / "report.json")]),
            main(["bdg", "--ensemble", "100", "--paths", "2", "--steps", "512", "--level", "9",
                  "--checks", "upper,hedge,domination", "--output", str(d / "bdg.json")]),
        ]
        assert all(c in (0, 2) for c in codes)
        files = sorted(p for p in d.rglob("*") if p.is_file())
        outputs.append({p.relative_to(d): p.read_bytes() for p in files})
    capsys.readouterr()
    a, b = outputs
    assert a.keys() == b.keys()
    csvs = [k for k in a if k.suffix == ".csv"]
    assert all(a[k] == b[k] for k in csvs)
    for k in (k for k in a if k.suffix == ".json"):
        ja, jb = json.loads(a[k]), json.loads(b[k])
        ja.pop("timestamp"), jb.pop("timestamp")
        assert ja == jb
    record_property("detail", f"{len(csvs)} CSV files byte-identical")
