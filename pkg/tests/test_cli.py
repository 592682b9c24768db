import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from buyback.cli import curves_table, main, mean_ci95, parse_grid, random_T_expected_ratio, replication_seed
from buyback.model import EventTrace
from buyback.numerics import gamma_gen, lambert_w_minus1


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_greedy_killer(capsys):
    code, out, _ = run(capsys, "simulate", "--gen", "greedy-killer:T=10,f=1", "--alg", "greedy")
    assert code == 0
    assert json.loads(out)["profit"] == 2.0


def test_simulate_fractional_writes_files(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--gen", "greedy-killer:T=10,f=1", "--alg", "fractional", "--out", str(tmp_path))
    assert code == 0
    doc = json.loads(out)
    assert doc["gap"] >= 1 / gamma_gen(1.0) - 1e-6
    assert doc["audit"]["passed"]
    for name in ("trace.csv", "audit.json", "result.json", "config.json"):
        assert (tmp_path / name).exists()


def test_missing_file(capsys):
    code, _, err = run(capsys, "simulate", "--instance", "/nonexistent.json", "--alg", "greedy")
    assert code == 2 and "no such instance" in err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2
    assert run(capsys, "simulate", "--gen", "permutation:K=3", "--alg", "nope")[0] == 2
    assert run(capsys, "simulate", "--gen", "nofamily:K=3", "--alg", "greedy")[0] == 2
    assert run(capsys, "sweep", "--f-grid", "3:0:1")[0] == 2


@pytest.mark.parametrize("alg", ["det", "free-disposal", "single-canonical", "lossless-round", "ak-round"])
def test_simulate_single_resource_algorithms(capsys, alg):
    code, out, _ = run(capsys, "simulate", "--gen", "continuum:T=50,ratio=1.1,f=1", "--alg", alg, "--reps", "50")
    assert code == 0
    assert json.loads(out)["opt"] == 50.0


def test_round_cap(capsys, tmp_path):
    from buyback.model import WeightMatrixInstance, save_instance

    inst = WeightMatrixInstance.from_matrix(np.random.default_rng(0).random((30, 2)), 0.5, capacities=[8, 8])
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    code, out, _ = run(capsys, "round", "--instance", str(path), "--alg", "cap-round", "--reps", "200")
    assert code == 0
    doc = json.loads(out)
    assert doc["kappa"] == pytest.approx(math.sqrt(2 * math.log(8) / 8))
    assert run(capsys, "round", "--instance", str(path), "--alg", "greedy")[0] == 2


def test_sweep_schema_and_reproducibility(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(capsys, "sweep", "--f-grid", "0:1:0.5", "--reps", "3", "--seed", "7", "--out", str(d))[0] == 0
    text = (a / "sweep.csv").read_text()
    assert text == (b / "sweep.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "f,algorithm,mean_gap,ci95"
    assert len(lines) == 1 + 3 * 4
    for line in lines[1:]:
        f, alg, mean, _ = line.split(",")
        if alg == "fractional":
            assert float(mean) >= 1 / gamma_gen(float(f)) - 1e-6
    root = ET.parse(a / "sweep.svg").getroot()
    assert len([e for e in root.iter() if e.get("class") == "series"]) == 6


def test_sweep_zero_reps(capsys, tmp_path):
    assert run(capsys, "sweep", "--reps", "0", "--out", str(tmp_path))[0] == 0
    assert (tmp_path / "sweep.csv").read_text() == "f,algorithm,mean_gap,ci95\n"


def test_curves(capsys, tmp_path):
    assert run(capsys, "curves", "--f-max", "3", "--step", "0.05", "--out", str(tmp_path))[0] == 0
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "f,gamma_gen,gamma_det"
    rows = np.array([[float(x) for x in l.split(",")] for l in lines[1:]])
    assert rows[0, 1] == pytest.approx(math.e / (math.e - 1), rel=1e-10)
    assert np.all(np.diff(rows[:, 1]) >= 0) and np.all(np.diff(rows[:, 2]) >= 0)
    for f, gg, gd in rows:
        if f >= (math.e - 2) / 2:
            assert gg == pytest.approx(-lambert_w_minus1(-1 / (math.e * (1 + f))), rel=1e-10)
        if f >= 1 / 3:
            assert gd == pytest.approx(1 + 2 * f + 2 * math.sqrt(f * (1 + f)), rel=1e-10)
    root = ET.parse(tmp_path / "curves.svg").getroot()
    assert len([e for e in root.iter() if e.get("class") == "series"]) == 2
    fs, _, _ = curves_table(1.0, 0.25)
    assert fs == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_lowerbound_commands(capsys):
    code, out, _ = run(capsys, "lowerbound", "--family", "det-single", "--f", "1", "--gamma-factor", "0.999")
    assert code == 0 and json.loads(out)["positive"] is False
    code, out, _ = run(capsys, "lowerbound", "--family", "continuum", "--f", "1")
    doc = json.loads(out)
    assert doc["ratio"] == pytest.approx(-lambert_w_minus1(-1 / (2 * math.e)), rel=0.01)
    code, out, _ = run(capsys, "lowerbound", "--family", "permutation", "--K", "20", "40")
    docs = json.loads(out)
    assert [d["K"] for d in docs] == [20, 40]
    assert all(d["ratio"] <= gamma_gen(0) + 0.05 for d in docs)


def test_audit_command(capsys, tmp_path):
    run(capsys, "gen", "--gen", "random:n=3,T=12,f=1,seed=4", "--out", str(tmp_path))
    inst = str(tmp_path / "instance.json")
    sim = tmp_path / "sim"
    run(capsys, "simulate", "--instance", inst, "--alg", "fractional", "--out", str(sim))
    trace = str(sim / "trace.csv")
    code, out, _ = run(capsys, "audit", "--instance", inst, "--trace", trace)
    assert code == 0 and json.loads(out)["passed"]
    tr = EventTrace.from_csv(trace)
    a, j, k, w, m = (c.copy() for c in tr.columns())
    m[len(m) // 2] += 1e-3
    bad = tmp_path / "bad.csv"
    EventTrace(a, j, k, w, m).to_csv(bad)
    assert run(capsys, "audit", "--instance", inst, "--trace", str(bad))[0] == 1
    code, _, err = run(capsys, "audit", "--instance", inst, "--trace", trace, "--lam", "9.8678442436886156", "--tau", "0.4368")
    assert code == 1 and "diverges" in err


def test_gen_and_opt(capsys, tmp_path):
    code, out, _ = run(capsys, "gen", "--gen", "permutation:K=3,seed=1")
    assert code == 0 and json.loads(out)
    code, out, _ = run(capsys, "opt", "--gen", "permutation:K=3,seed=1")
    assert json.loads(out)["opt"] == pytest.approx(11 / 6)


def test_helpers():
    assert parse_grid("0:3:0.25")[-1] == 3.0 and len(parse_grid("0:3:0.25")) == 13
    assert replication_seed(1, 2, 3) == replication_seed(1, 2, 3) != replication_seed(1, 2, 4)
    mean, half = mean_ci95([1.0, 2.0, 3.0])
    assert mean == 2.0 and half == pytest.approx(4.302652729911275 / math.sqrt(3))
    assert mean_ci95([5.0]) == (5.0, 0.0)


def test_random_T_ratio_small():
    r, e_opt, e_alg = random_T_expected_ratio(50.0, 1.01, 1.0)
    assert e_opt > e_alg > 0
    assert r == pytest.approx(gamma_gen(1.0), rel=0.01)
