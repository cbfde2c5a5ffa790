import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathwise.errors import DomainError, ParseError, ValidationError
from pathwise.paths import (
    AdaptedProcess,
    SampledPath,
    check_non_anticipating,
    generate_random_walk,
    increment,
    load_path,
    running_sup,
    save_path,
)


def linear(T=1.0, slope=1.0, n=4):
    g = np.linspace(0.0, T, n + 1)
    return SampledPath(g, slope * g)


class TestSampledPath:
    def test_eval_on_grid_is_exact(self):
        p = generate_random_walk(3, 100)
        assert np.array_equal(p.eval(p.grid), p.values)

    def test_eval_between_points(self):
        p = SampledPath([0.0, 1.0, 2.0], [[0.0], [1.0], [0.25]])
        assert p.eval(0.5)[0] == 0.5
        assert p.eval(1.5)[0] == pytest.approx(0.625)

    @pytest.mark.parametrize(
        "grid, values",
        [
            ([0.0], [[0.0]]),
            ([0.1, 1.0], [[0.0], [1.0]]),
            ([0.0, 0.5, 0.5], [[0.0], [1.0], [2.0]]),
            ([0.0, 1.0], [[0.0], [np.nan]]),
            ([0.0, 1.0], [[0.0]]),
        ],
    )
    def test_rejects_bad_input(self, grid, values):
        with pytest.raises(ValidationError):
            SampledPath(grid, values)

    def test_eval_outside_horizon(self):
        with pytest.raises(DomainError):
            linear().eval(1.5)

    def test_arrays_are_read_only(self):
        p = linear()
        with pytest.raises(ValueError):
            p.values[0, 0] = 3.0

    def test_truncate_keeps_prefix(self):
        p = generate_random_walk(0, 10)
        q = p.truncate(0.35)
        assert q.horizon == 0.35
        assert np.array_equal(q.values[:-1], p.values[: len(q.grid) - 1])
        assert np.allclose(q.values[-1], p.eval(0.35))


class TestIncrement:
    def test_linear_path(self):
        g = np.array([0.0, 2.0])
        p = SampledPath(g, g[:, None])
        assert increment(p, 0.5, 1.5)[0] == 1.0

    def test_same_time(self):
        p = generate_random_walk(1, 20)
        assert np.all(increment(p, 0.3, 0.3) == 0)

    def test_two_dimensional(self):
        g = np.array([0.0, 1.0])
        p = SampledPath(g, np.column_stack([g, 2 * g]))
        assert np.array_equal(increment(p, 0.0, 1.0), [1.0, 2.0])

    def test_outside(self):
        with pytest.raises(DomainError):
            increment(linear(), 0.0, 2.0)

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
    def test_additive(self, ts):
        u, v, w = sorted(ts)
        p = generate_random_walk(7, 64)
        lhs = increment(p, u, w)
        rhs = increment(p, u, v) + increment(p, v, w)
        assert np.allclose(lhs, rhs, atol=1e-14)


class TestRunningSup:
    def test_constant_norm(self):
        proc = AdaptedProcess([0.0, 1.0, 2.0], [[3.0, 4.0]] * 3)
        assert all(running_sup(proc, t) == 5.0 for t in (0.0, 0.7, 2.0))

    def test_samples(self):
        proc = AdaptedProcess([0.0, 1.0, 2.0, 3.0], [0.0, 3.0, -5.0, 2.0])
        assert [running_sup(proc, t) for t in (0, 1, 2, 3)] == [0.0, 3.0, 5.0, 5.0]
        assert np.array_equal(proc.running_sup(), [0.0, 3.0, 5.0, 5.0])

    def test_off_grid_end(self):
        g = np.array([0.0, 2.0])
        proc = AdaptedProcess(g, 1.0 - g)
        assert running_sup(proc, 2.0) == 1.0
        assert running_sup(proc, 1.0) == 1.0

    def test_includes_value_at_t(self):
        proc = AdaptedProcess([0.0, 1.0], [0.0, 4.0])
        assert running_sup(proc, 0.5) == 2.0

    @given(st.integers(0, 1000))
    def test_non_decreasing(self, seed):
        p = generate_random_walk(seed, 32)
        proc = AdaptedProcess.on(p, p.values)
        ts = np.linspace(0, 1, 17)
        sups = [running_sup(proc, t) for t in ts]
        assert all(a <= b for a, b in zip(sups, sups[1:]))


class TestRandomWalk:
    def test_zero_vol_is_constant(self):
        p = generate_random_walk(0, 16, vol=0.0)
        assert np.all(p.values == 0)

    def test_deterministic(self):
        assert generate_random_walk(5, 100, dim=2) == generate_random_walk(5, 100, dim=2)

    def test_different_seeds_differ(self):
        assert generate_random_walk(5, 100) != generate_random_walk(6, 100)

    def test_zero_steps(self):
        with pytest.raises(ValidationError):
            generate_random_walk(0, 0)

    def test_increment_variance(self):
        n = 2**16
        p = generate_random_walk(1, n)
        var = np.var(np.diff(p.values[:, 0])) * n
        assert abs(var - 1.0) < 0.05

    def test_increments_have_fixed_size(self):
        p = generate_random_walk(2, 256, horizon=4.0, vol=0.5)
        assert np.allclose(np.abs(np.diff(p.values[:, 0])), 0.5 * np.sqrt(4.0 / 256))


class TestCSV:
    def test_three_rows(self):
        p = load_path("t,x1\n0,0\n0.5,0.25\n1,1\n")
        assert p.n_steps == 2 and p.horizon == 1.0
        assert np.array_equal(p.values[:, 0], [0, 0.25, 1])

    def test_duplicate_time(self):
        with pytest.raises(ValidationError):
            load_path("t,x1\n0,0\n0.5,1\n0.5,2\n")

    def test_two_dimensional(self):
        p = load_path(io.StringIO("t,x1,x2\n0,0,1\n1,2,3\n"))
        assert p.dim == 2

    def test_malformed_row_reports_line(self):
        with pytest.raises(ParseError, match="line 3"):
            load_path("t,x1\n0,0\n0.5,abc\n1,1\n")

    def test_wrong_field_count(self):
        with pytest.raises(ParseError, match="line 2"):
            load_path("t,x1\n0,0,9\n1,1\n")

    def test_bad_header(self):
        with pytest.raises(ParseError, match="line 1"):
            load_path("time,x\n0,0\n1,1\n")

    @given(st.integers(0, 10**6), st.integers(1, 3))
    def test_round_trip_is_exact(self, seed, dim):
        p = generate_random_walk(seed, 50, horizon=0.3, dim=dim, vol=np.pi)
        q = load_path(save_path(p))
        assert np.array_equal(p.grid, q.grid) and np.array_equal(p.values, q.values)


def test_prefix_replay_detects_lookahead():
    p = generate_random_walk(4, 40)

    def honest(path):
        return AdaptedProcess.on(path, np.maximum.accumulate(path.values[:, 0]))

    def cheat(path):
        return AdaptedProcess.on(path, np.full(len(path.grid), path.values[-1, 0]))

    cuts = range(1, 41, 7)
    assert check_non_anticipating(honest, p, cuts)
    assert not check_non_anticipating(cheat, p, cuts)
