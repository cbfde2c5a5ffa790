import json

import numpy as np
import pytest

from pathwise.cli import main
from pathwise.paths import SampledPath, load_path, save_path


@pytest.fixture
def run(capsys):
    def _run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    return _run


@pytest.fixture
def bs_problem(tmp_path):
    f = tmp_path / "bs.json"
    f.write_text(json.dumps({"model": "black_scholes", "x0": 1.0, "sigma": 0.3, "drift": {"up_rate": 0.1}}))
    return f


def test_gen_zero_vol(run):
    code, out, _ = run("gen", "--steps", 4, "--vol", 0)
    assert code == 0
    p = load_path(out)
    assert np.all(p.values == 0) and p.n_steps == 4


def test_gen_ensemble(run, tmp_path):
    code, _, _ = run("gen", "--steps", 16, "--ensemble", 3, "--seed", 10, "--output", tmp_path / "ens")
    assert code == 0
    files = sorted((tmp_path / "ens").iterdir())
    assert [f.name for f in files] == ["path_0000.csv", "path_0001.csv", "path_0002.csv"]
    code, single, _ = run("gen", "--steps", 16, "--seed", 11)
    assert files[1].read_text() == single


def test_qv_linear_path(run, tmp_path):
    src = tmp_path / "lin.csv"
    g = np.array([0.0, 1.0])
    save_path(SampledPath(g, g[:, None]), str(src))
    for n in range(0, 6):
        code, out, _ = run("qv", "--input", src, "--level", n)
        assert code == 0
        last = out.strip().splitlines()[-1].split(",")
        assert float(last[-1]) == 2.0**-n


def test_qv_report_and_table(run, tmp_path):
    src = tmp_path / "lin.csv"
    g = np.array([0.0, 1.0])
    save_path(SampledPath(g, g[:, None]), str(src))
    code, _, _ = run("qv", "--input", src, "--tol", 1e-3, "--output", tmp_path / "q.csv",
                     "--table", tmp_path / "t.csv", "--report", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["converged"] and rep["trace_T"] == 2.0 ** -rep["level_used"]
    table = (tmp_path / "t.csv").read_text().splitlines()
    assert table[0] == "level,distance" and table[1] == "0,0.5"


def test_qv_unconverged_exit_code(run, tmp_path):
    src = tmp_path / "w.csv"
    run("gen", "--steps", 256, "--output", src)
    code, _, _ = run("qv", "--input", src, "--tol", 1e-12, "--n-max", 3, "--output", tmp_path / "q.csv")
    assert code == 2


def test_solve_black_scholes_report(run, tmp_path, bs_problem):
    code, out, _ = run("solve", "--problem", bs_problem, "--steps", 1024, "--oracle", "bs",
                       "--report", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert 0 < rep["bs_sup_rel_error"] < 0.01
    assert rep["passed"] and "timestamp" in rep
    assert out.splitlines()[0] == "t,x1,bs_x1"


def test_solve_direct_oracle(run, tmp_path, bs_problem):
    code, out, _ = run("solve", "--problem", bs_problem, "--steps", 512, "--oracle", "direct",
                       "--report", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["direct_sup_abs_error"] < 1e-10


def test_solve_custom_problem(run, tmp_path):
    prob = tmp_path / "p.json"
    prob.write_text(json.dumps({
        "model": "custom", "x0": [1.0],
        "K": {"type": "running_max", "coef": 0.5}, "F": {"type": "linear", "coef": 0.2},
        "drift": {"up_rate": 0.3, "M": 0.5},
    }))
    code, out, _ = run("solve", "--problem", prob, "--steps", 256)
    assert code == 0 and out.startswith("t,x1\n")


def test_bdg_sweep(run, tmp_path):
    code, _, _ = run("bdg", "--ensemble", 50, "--max-len", 50, "--paths", 2, "--steps", 256,
                     "--level", 8, "--checks", "upper,hedge,domination", "--output", tmp_path / "b.json")
    rep = json.loads((tmp_path / "b.json").read_text())
    assert code == 0 and rep["passed"]
    assert rep["violations"]["upper"] == 0 and len(rep["domination"]) == 2


def test_bdg_reverse_bound_gates_exit(run, tmp_path):
    code, _, _ = run("bdg", "--ensemble", 50, "--paths", 1, "--steps", 128, "--level", 6,
                     "--output", tmp_path / "b.json")
    rep = json.loads((tmp_path / "b.json").read_text())
    assert code == 2 and rep["violations"]["reverse"] > 0 and not rep["checks"]["reverse"]


@pytest.mark.parametrize(
    "argv",
    [
        ("qv", "--input", "/nonexistent.csv"),
        ("solve", "--problem", "/nonexistent.json"),
        ("qv", "--level", "-2"),
        ("gen", "--steps", "0"),
        ("frobnicate",),
        ("bdg", "--checks", "upper,bogus"),
    ],
)
def test_errors_are_json(run, argv):
    code, _, err = run(*argv)
    assert code == 1
    assert "message" in json.loads(err)


def test_malformed_input(run, tmp_path):
    src = tmp_path / "bad.csv"
    src.write_text("t,x1\n0,0\n0.5,oops\n")
    code, _, err = run("qv", "--input", src)
    assert code == 1 and "line 3" in json.loads(err)["message"]


def test_bad_problem_file(run, tmp_path):
    prob = tmp_path / "p.json"
    prob.write_text(json.dumps({"model": "custom", "K": {"type": "cubic"}}))
    code, _, err = run("solve", "--problem", prob)
    assert code == 1 and "cubic" in json.loads(err)["message"]


def test_deterministic_outputs(run, tmp_path, bs_problem):
    for i in range(2):
        d = tmp_path / f"run{i}"
        d.mkdir()
        run("gen", "--seed", 7, "--steps", 512, "--output", d / "p.csv")
        run("qv", "--input", d / "p.csv", "--level", 5, "--output", d / "q.csv")
        run("solve", "--problem", bs_problem, "--input", d / "p.csv", "--output", d / "s.csv")
    for name in ("p.csv", "q.csv", "s.csv"):
        assert (tmp_path / "run0" / name).read_bytes() == (tmp_path / "run1" / name).read_bytes()
