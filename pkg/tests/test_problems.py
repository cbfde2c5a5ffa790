import json

import numpy as np
import pytest

from pathwise.errors import ValidationError
from pathwise.paths import generate_random_walk
from pathwise.problems import load_problem, parse_problem
from pathwise.sde import solve


def test_black_scholes_spec():
    spec = parse_problem({"model": "black_scholes", "x0": 2.0, "sigma": 0.4, "drift": {"up_rate": 0.1}})
    prob = spec.build(1.0)
    assert prob.L == pytest.approx(1.4)
    assert prob.drift.bound == pytest.approx(0.1)
    assert spec.sigma == 0.4


def test_custom_spec_and_override():
    spec = parse_problem({
        "model": "custom", "x0": [1, 2],
        "K": {"type": "constant", "value": [0.1, 0.2]},
        "F": {"type": "constant", "value": [[0.1, 0], [0, 0.1]]},
        "L": 1.0, "level": 4, "drift": {"up_rate": 0.5, "M": 1.0},
    })
    prob = spec.build(1.0)
    assert prob.L == 1.0 and prob.level == 4
    sol = solve(prob, generate_random_walk(0, 64, dim=2))
    assert sol.level == 4 and sol.q == 1 / (4 * 36 * 16)


def test_from_file(tmp_path):
    f = tmp_path / "p.json"
    f.write_text(json.dumps({"model": "custom"}))
    spec = load_problem(str(f))
    assert spec.build(1.0).L == 0.0
    assert load_problem('{"model": "custom"}').model == "custom"


@pytest.mark.parametrize(
    "raw, msg",
    [
        ({"model": "heston"}, "unknown model"),
        ({"model": "black_scholes"}, "sigma"),
        ({"model": "black_scholes", "sigma": 1, "x0": [1, 2]}, "one-dimensional"),
        ({"model": "custom", "K": {"type": "linear"}}, "coef"),
        ({"model": "custom", "F": {"type": "nope"}}, "unknown F"),
        ({"model": "custom", "drift": {"up_rate": -1}}, "non-negative"),
        ({"model": "custom", "level": -3}, "level"),
        ({"model": "custom", "colour": "red"}, "unknown problem keys"),
        ({"model": "custom", "tol": "x"}, "tol"),
    ],
)
def test_invalid(raw, msg):
    with pytest.raises(ValidationError, match=msg):
        parse_problem(raw)


def test_bad_json():
    with pytest.raises(ValidationError, match="not valid JSON"):
        load_problem("{nope")


def test_drift_bound_enforced():
    spec = parse_problem({"model": "custom", "drift": {"up_rate": 1.0, "M": 0.5}})
    with pytest.raises(ValidationError, match="bound"):
        spec.build(1.0)
