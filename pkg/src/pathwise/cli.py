"""Command-line driver: ``pathwise {gen,qv,bdg,solve}``.

Exit codes: 0 all checks passed, 1 usage or input/output error (a JSON
object is written to stderr), 2 a verification check returned false.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bdg import C1, fuzz_sequences, verify_domination, verify_pathwise_bdg
from .errors import PathwiseError, ValidationError
from .lebesgue import resolution_level
from .paths import SampledPath, generate_random_walk, load_path, save_path
from .problems import load_problem
from .quadvar import DEFAULT_N_MAX, DEFAULT_TOL, level_distances, qv, qv_at_level, qv_to_csv
from .sde import black_scholes_exact, solve, solve_direct, working_grid
from .strategy import grid_rebalance, integral_qv, realize

logger = logging.getLogger("pathwise")

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2
BDG_CHECKS = ("upper", "reverse", "hedge", "domination")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    args: argparse.Namespace


# --------------------------------------------------------------------------
# io helpers
# --------------------------------------------------------------------------


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_text(dest, text: str) -> None:
    if dest in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(dest, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ValidationError(f"cannot write {dest}: {exc.strerror}") from None


def _write_json(dest, obj) -> None:
    _write_text(dest, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _finite(x):
    """JSON has no infinities; report them as strings."""
    return x if math.isfinite(x) else str(x)


def _read_path(src) -> SampledPath:
    if src in (None, "-"):
        return load_path(sys.stdin)
    try:
        with open(src) as fh:
            return load_path(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {src}: {exc.strerror}") from None


def _pool_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------


def _gen_one(job):
    seed, a = job
    return save_path(generate_random_walk(seed, a["steps"], a["horizon"], a["dim"], a["vol"]))


def cmd_gen(cfg: RunConfig) -> int:
    a = cfg.args
    params = dict(steps=a.steps, horizon=a.horizon, dim=a.dim, vol=a.vol)
    if a.ensemble == 1:
        _write_text(a.output, _gen_one((a.seed, params)))
        return EXIT_OK
    if a.output in (None, "-"):
        raise ValidationError("--ensemble > 1 needs --output DIR")
    out = Path(a.output)
    out.mkdir(parents=True, exist_ok=True)
    texts = _pool_map(_gen_one, [(a.seed + i, params) for i in range(a.ensemble)], a.workers)
    for i, text in enumerate(texts):
        _write_text(out / f"path_{i:04d}.csv", text)
    return EXIT_OK


# --------------------------------------------------------------------------
# qv
# --------------------------------------------------------------------------


def cmd_qv(cfg: RunConfig) -> int:
    a = cfg.args
    path = _read_path(a.input)
    if a.level is not None:
        result = qv_at_level(path, a.level)
        distances = level_distances(path, range(a.level + 1))
        converged = None
    else:
        result = qv(path, tol=a.tol, n_max=a.n_max)
        distances = result.distances
        converged = result.converged
    _write_text(a.output, qv_to_csv(result))
    table = "level,distance\n" + "".join(f"{n},{d!r}\n" for n, d in sorted(distances.items()))
    if a.table:
        _write_text(a.table, table)
    if a.report:
        _write_json(a.report, {
            "command": "qv",
            "timestamp": _timestamp(),
            "tol": a.tol,
            "level_used": result.level_used,
            "converged": converged,
            "trace_T": float(result.trace[-1]),
            "distances": [{"level": n, "distance": d} for n, d in sorted(distances.items())],
        })
    return EXIT_CHECK if converged is False else EXIT_OK


# --------------------------------------------------------------------------
# bdg
# --------------------------------------------------------------------------


def _domination_job(job):
    pid, seed, steps, level, path_text = job
    path = load_path(path_text) if path_text is not None else generate_random_walk(seed, steps)
    rng = np.random.Generator(np.random.PCG64([seed, pid]))
    every = int(rng.integers(1, 17))
    pos = rng.uniform(-1.0, 1.0, size=(path.n_steps // every + 2, path.dim))
    rule = grid_rebalance(every, lambda p, taus: pos[: len(taus)], name="bounded-random")
    real = realize(rule, path)
    qvp = qv_at_level(path, level)
    lam = math.sqrt(max(integral_qv(real, qvp, path.horizon), 0.0))
    return verify_domination(real, path, level, lam, qv=qvp, path_id=pid).summary()


def cmd_bdg(cfg: RunConfig) -> int:
    a = cfg.args
    checks = [c.strip() for c in a.checks.split(",") if c.strip()]
    bad = set(checks) - set(BDG_CHECKS)
    if bad:
        raise UsageError(f"unknown checks {sorted(bad)}; choose from {list(BDG_CHECKS)}")
    counts = {"upper": 0, "reverse": 0, "davis": 0, "hedge": 0}
    worst = {"upper": math.inf, "reverse": math.inf, "davis": math.inf}
    first_reverse = None
    for i, x in enumerate(fuzz_sequences(a.seed, a.ensemble, a.max_len)):
        r = verify_pathwise_bdg(x, c1=a.c1)
        counts["upper"] += not r.upper_ok
        counts["reverse"] += not r.lower_ok
        counts["davis"] += not r.davis_lower_ok
        counts["hedge"] += not r.hedge_bounded
        worst["upper"] = min(worst["upper"], r.upper_margin)
        worst["reverse"] = min(worst["reverse"], r.lower_margin)
        worst["davis"] = min(worst["davis"], r.davis_lower_margin)
        if first_reverse is None and not r.lower_ok:
            first_reverse = i
    if a.input:
        text = Path(a.input).read_text() if a.input != "-" else sys.stdin.read()
        jobs = [(0, a.seed, a.steps, a.level, text)]
    else:
        jobs = [(i, a.seed + i, a.steps, a.level, None) for i in range(a.paths)]
    dom = _pool_map(_domination_job, jobs, a.workers) if "domination" in checks else []
    outcome = {
        "upper": counts["upper"] == 0,
        "reverse": counts["reverse"] == 0,
        "hedge": counts["hedge"] == 0,
        "domination": all(d["passed"] for d in dom),
    }
    report = {
        "command": "bdg",
        "timestamp": _timestamp(),
        "seed": a.seed,
        "c1": a.c1,
        "sequences": a.ensemble,
        "violations": counts,
        "worst_margins": {k: _finite(v) for k, v in worst.items()},
        "first_reverse_violation": first_reverse,
        "domination": dom,
        "checks": {c: outcome[c] for c in checks},
        "passed": all(outcome[c] for c in checks),
    }
    _write_json(a.output, report)
    return EXIT_OK if report["passed"] else EXIT_CHECK


# --------------------------------------------------------------------------
# solve
# --------------------------------------------------------------------------


def _solution_csv(times, X, extra: dict) -> str:
    d = X.shape[1]
    cols = ["t"] + [f"x{i + 1}" for i in range(d)] + list(extra)
    rows = [",".join(cols)]
    data = np.column_stack([times, X] + [np.asarray(v).reshape(len(times), -1) for v in extra.values()])
    for row in data:
        rows.append(",".join(repr(float(v)) for v in row))
    return "\n".join(rows) + "\n"


def cmd_solve(cfg: RunConfig) -> int:
    a = cfg.args
    spec = load_problem(a.problem)
    if a.level is not None:
        spec = spec.__class__(**{**spec.__dict__, "level": a.level})
    if a.tol is not None:
        spec = spec.__class__(**{**spec.__dict__, "tol": a.tol})
    if a.input:
        path = _read_path(a.input)
    else:
        path = generate_random_walk(a.seed, a.steps)
    problem = spec.build(path.horizon)
    if len(spec.x0) not in (1, path.dim):
        raise ValidationError(f"x0 has {len(spec.x0)} entries, path has dimension {path.dim}")
    wg = working_grid(problem, path)
    sol = solve(problem, path, grid=wg)
    X = sol.X.values
    report = {"command": "solve", "timestamp": _timestamp(), "model": spec.model, **sol.report()}
    extra = {}
    checks = {
        "converged": sol.converged,
        "stabilization": report["stabilization_ok"],
        "patching": sol.patching_ok,
        "residual": sol.residual <= 1e-9 * max(1.0, float(np.abs(X).max())),
        "window_bound": sol.closed_windows <= sol.window_bound,
    }
    if a.oracle == "direct":
        direct = solve_direct(problem, path, grid=wg).X.values
        gap = float(np.abs(direct - X).max())
        report["direct_sup_abs_error"] = gap
        checks["direct_agreement"] = gap < 1e-10
        extra.update({f"direct_x{i + 1}": direct[:, i] for i in range(X.shape[1])})
    if spec.model == "black_scholes":
        bs = black_scholes_exact(
            spec.x0[0], spec.sigma, problem.drift, path,
            qv_at_level(path, resolution_level(path)), times=wg.times,
        ).values[:, 0]
        scale = np.maximum(np.abs(bs), 1e-300)
        report["bs_sup_rel_error"] = float((np.abs(X[:, 0] - bs) / scale).max())
        if a.oracle == "bs":
            extra["bs_x1"] = bs
    elif a.oracle == "bs":
        raise ValidationError("--oracle bs needs a black_scholes problem")
    report["checks"] = checks
    report["passed"] = all(checks.values())
    _write_text(a.output, _solution_csv(wg.times, X, extra))
    if a.report:
        _write_json(a.report, report)
    return EXIT_OK if report["passed"] else EXIT_CHECK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pathwise", description="Pathwise integration, covariation, BDG and equation solving.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write seeded random-walk path(s) as CSV")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--steps", type=int, default=1024)
    g.add_argument("--horizon", type=float, default=1.0)
    g.add_argument("--dim", type=int, default=1)
    g.add_argument("--vol", type=float, default=1.0)
    g.add_argument("--ensemble", type=int, default=1, help="number of paths (seeds seed..seed+E-1)")
    g.add_argument("--output", help="file, or directory when --ensemble > 1 (default stdout)")
    g.add_argument("--workers", type=int, default=1)

    q = sub.add_parser("qv", help="quadratic covariation CSV and level convergence table")
    q.add_argument("--input", help="path CSV (default stdin)")
    q.add_argument("--level", type=int, help="fixed level; otherwise chosen by --tol")
    q.add_argument("--tol", type=float, default=DEFAULT_TOL)
    q.add_argument("--n-max", type=int, default=DEFAULT_N_MAX)
    q.add_argument("--output", help="QV CSV (default stdout)")
    q.add_argument("--table", help="write the level,distance table here")
    q.add_argument("--report", help="JSON report")

    b = sub.add_parser("bdg", help="discrete BDG fuzzing and finite-level domination sweep")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--ensemble", type=int, default=1000, help="number of fuzzed sequences")
    b.add_argument("--max-len", type=int, default=1000)
    b.add_argument("--paths", type=int, default=10, help="random walks for the domination check")
    b.add_argument("--steps", type=int, default=4096)
    b.add_argument("--level", type=int, default=12)
    b.add_argument("--c1", type=float, default=C1)
    b.add_argument("--input", help="check domination on this path instead of random walks")
    b.add_argument("--checks", default=",".join(BDG_CHECKS),
                   help="comma list of checks gating the exit code")
    b.add_argument("--output", help="JSON report (default stdout)")
    b.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("solve", help="solve an equation from a JSON problem file on one path")
    s.add_argument("--problem", required=True, help="problem JSON file")
    s.add_argument("--input", help="path CSV; otherwise a random walk from --seed/--steps")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=4096)
    s.add_argument("--level", type=int, help="partition level (default: resolution level of the path)")
    s.add_argument("--tol", type=float, help="Picard tolerance")
    s.add_argument("--oracle", choices=["none", "direct", "bs"], default="none")
    s.add_argument("--output", help="solution CSV (default stdout)")
    s.add_argument("--report", help="JSON run report")
    return p


def _validate(args) -> None:
    for name in ("steps", "ensemble", "paths", "max_len", "n_max", "workers", "dim"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    for name in ("level",):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            raise UsageError("--level must be >= 0")
    for name in ("tol", "horizon"):
        v = getattr(args, name, None)
        if v is not None and not v > 0:
            raise UsageError(f"--{name} must be positive")


COMMANDS = {"gen": cmd_gen, "qv": cmd_qv, "bdg": cmd_bdg, "solve": cmd_solve}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        return COMMANDS[args.command](RunConfig(args.command, args))
    except UsageError as exc:
        err = {"error": "usage", "message": str(exc)}
    except (PathwiseError, OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(err) + "\n")
    return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
