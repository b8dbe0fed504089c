import csv
import json
import math

import numpy as np
import pytest

from consumption_duality.cli import OUT_ENV, main
from consumption_duality.duality import solve_primal_direct
from consumption_duality.tree import build_recombining
from consumption_duality.utility import UtilitySpec


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def summary(path):
    return json.loads((path / "summary.json").read_text())


def test_tree_duality_binomial(tmp_path):
    assert main(["tree-duality", "--tree", "binomial", "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    gap = next(c for c in s["checks"] if c["name"] == "conjugacy_gap")
    assert gap["pass"] and gap["value"] <= 1e-8
    assert s["results"]["y_star"] == pytest.approx(2.0)
    rows = read_csv(tmp_path / "nodes.csv")
    assert [float(r["c"]) for r in rows] == pytest.approx([0.5, 0.75, 0.375])
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert "started_utc" in meta and "started_utc" not in json.dumps(s)


def test_bessel_forced_failure(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.5, "dt": 0.1, "n_paths": 200, "seed": 1}))
    assert main(["bessel", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    s = summary(tmp_path / "o")
    assert "m_hat_residual" in s["failures"] and not s["passed"]


def test_bessel_pass_with_scan_and_refine(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("alpha: 0.1\ndt: 0.01\nn_paths: 5000\nseed: 4\n")
    code = main(["bessel", "--config", str(cfg), "--psi-grid", "0,0.5", "--refine", "--out", str(tmp_path / "o")])
    assert code == 0
    names = {c["name"] for c in summary(tmp_path / "o")["checks"]}
    assert {"z0_strict_local_martingale", "m_hat_residual", "refinement_slope_0", "dual_scan_min_at_zero"} <= names
    rows = read_csv(tmp_path / "o" / "potential.csv")
    for r in rows:
        assert float(r["mean"]) == pytest.approx(math.exp(-0.1 * float(r["time"])), abs=1e-12)


@pytest.mark.parametrize("args,closed", [
    (["--utility", "log"], lambda y: -math.log(y) - 1),
    (["--utility", "power", "--p", "0.5"], lambda y: 1 / y),
    (["--utility", "power", "--p", "-1"], lambda y: -2 * math.sqrt(y)),
])
def test_conjugate_table(tmp_path, args, closed):
    assert main(["conjugate", *args, "--grid", "0.01:100:9", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "conjugate.csv")
    assert len(rows) == 9
    for r in rows:
        assert float(r["V"]) == pytest.approx(closed(float(r["y"])), rel=1e-14)


def test_superhedge_claims(tmp_path):
    assert main(["superhedge", "--claim", "put:1", "--out", str(tmp_path / "a")]) == 0
    assert summary(tmp_path / "a")["results"]["W0"] == pytest.approx(1 / 3)
    node_map = tmp_path / "claim.json"
    node_map.write_text(json.dumps({"2": 0.5}))
    assert main(["superhedge", "--claim", str(node_map), "--out", str(tmp_path / "b")]) == 0
    assert summary(tmp_path / "b")["results"]["W0"] == pytest.approx(1 / 3)


def test_sweep_bessel_alpha(tmp_path):
    base = tmp_path / "base.json"
    base.write_text(json.dumps({"command": "bessel", "config": {"n_paths": 500, "dt": 0.01}}))
    assert main(["sweep", "--base", str(base), "--axis", "alpha=0.05,0.1,0.2", "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert [float(r["alpha"]) for r in rows] == [0.05, 0.1, 0.2]
    for r in rows:
        assert float(r["potential_target_T"]) == pytest.approx(math.exp(-float(r["alpha"])), rel=1e-15)


def test_sweep_tree_x_grid(tmp_path):
    base = tmp_path / "base.json"
    base.write_text(json.dumps({"command": "tree-duality", "tree": "trinomial", "utility": "log"}))
    assert main(["sweep", "--base", str(base), "--axis", "x=0.5,1,2,4", "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    u = [float(r["u_of_x"]) for r in rows]
    assert all(a < b for a, b in zip(u, u[1:]))
    tri = build_recombining(3, 3, [1.5, 1, 0.5], [0.25, 0.5, 0.25], alpha=0.1)
    for r in rows:
        direct = solve_primal_direct(tri, UtilitySpec.log(), float(r["x"])).value
        assert float(r["u_direct"]) == pytest.approx(direct, abs=1e-9)


def test_sweep_records_failures_and_continues(tmp_path):
    base = tmp_path / "base.json"
    base.write_text(json.dumps({"command": "tree-duality", "tree": "binomial"}))
    assert main(["sweep", "--base", str(base), "--axis", "x=1,-1,2", "--out", str(tmp_path / "o")]) == 1
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert [r["status"] for r in rows] == ["ok", "error", "ok"]


def test_input_errors(tmp_path):
    out = str(tmp_path / "o")
    base = tmp_path / "base.json"
    base.write_text(json.dumps({"command": "bessel"}))
    assert main(["sweep", "--base", str(base), "--axis", "alpha=", "--out", out]) == 2
    assert main(["tree-duality", "--tree", str(tmp_path / "missing.json"), "--out", out]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["bessel", "--config", str(bad), "--out", out]) == 2
    assert main(["tree-duality", "--utility", "power", "--out", out]) == 2
    assert main(["conjugate", "--grid", "a:b:c", "--out", out]) == 2
    assert main(["no-such-command"]) == 2


def test_out_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    assert main(["conjugate", "--utility", "log", "--grid", "1,2"]) == 0
    assert (tmp_path / "envout" / "conjugate.csv").exists()


def test_random_tree_seeded(tmp_path):
    args = ["tree-duality", "--tree", "random:2:3", "--utility", "power", "--p", "-1"]
    assert main(args + ["--seed", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--seed", "4", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "nodes.csv").read_bytes()
    b = (tmp_path / "b" / "nodes.csv").read_bytes()
    assert a != b
