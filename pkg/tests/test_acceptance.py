"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also printed with capture disabled so they show up in normal runs.
"""

import math
import time

import numpy as np
import pytest

from consumption_duality import bessel as bl
from consumption_duality.cli import main
from consumption_duality.duality import calibrate, duality_report, solve_dual, solve_primal_direct
from consumption_duality.superhedge import claim_target, smallest_dominating, superhedge
from consumption_duality.tree import build_recombining, random_tree
from consumption_duality.utility import UtilitySpec, fenchel_gap
from constants import Z0_T1_HALF_WIDTH, Z0_T1_MEAN
from oracles import superhedge_oracle

UTILITIES = [UtilitySpec.log(), UtilitySpec.power(-1), UtilitySpec.power(0.5), UtilitySpec.power(0.9)]


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def binomial():
    return build_recombining(2, 1, [2.0, 0.5], [0.5, 0.5])


def oracle_scale_trees(n: int, seed: int):
    """Random trees with at most 3 periods and 3 branches, mixed clocks and utilities."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        T = int(rng.integers(1, 4))
        k = int(rng.integers(2, 4))
        alpha = float(rng.choice([0.0, 0.1, 0.5]))
        dt = float(rng.choice([1.0, 0.5]))
        out.append((random_tree(rng, T, k, alpha=alpha, dt=dt), UTILITIES[i % len(UTILITIES)]))
    return out


def test_criterion_1_fenchel(report):
    rng = np.random.default_rng(11)
    n = 10_000
    t0 = time.perf_counter()
    worst_low, worst_eq = math.inf, 0.0
    for spec in UTILITIES:
        x = 10 ** rng.uniform(-3, 3, n)
        y = 10 ** rng.uniform(-3, 3, n)
        worst_low = min(worst_low, float(np.min(fenchel_gap(spec, x, y))))
        worst_eq = max(worst_eq, float(np.max(np.abs(fenchel_gap(spec, x, spec.dU(x))))))
    elapsed = time.perf_counter() - t0
    ok = worst_low >= -1e-12 and worst_eq <= 1e-10 and elapsed < 1.0
    report(1, ok, f"min gap {worst_low:.3e}, max gap at y=U'(x) {worst_eq:.3e}, {elapsed:.3f}s")


def test_criterion_2_weak_duality(report):
    x_grid = np.logspace(-1, 1, 20)
    y_grid = np.logspace(-2, 2, 20)
    t0 = time.perf_counter()
    worst = -math.inf
    for tree, spec in oracle_scale_trees(50, seed=21):
        q = None
        v = np.empty(y_grid.size)
        for j, y in enumerate(y_grid):
            sol = solve_dual(tree, spec, y, q0=q)
            q, v[j] = sol.q, sol.value
        u = np.array([solve_primal_direct(tree, spec, x).value for x in x_grid])
        excess = u[:, None] - (v[None, :] + x_grid[:, None] * y_grid[None, :])
        worst = max(worst, float(np.max(excess)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 60
    report(2, ok, f"max u(x) - v(y) - xy over 50 trees x 400 pairs = {worst:.3e}, {elapsed:.1f}s")


def test_criterion_3_strong_duality(report):
    t0 = time.perf_counter()
    log = UtilitySpec.log()
    cal = calibrate(binomial(), log, 1.0)
    u_bin = solve_primal_direct(binomial(), log, 1.0).value
    u_closed = -3.5 * math.log(2) + math.log(3)
    bin_err = max(abs(u_bin - u_closed), abs(cal.dual.value + cal.y - u_closed))
    y_err = abs(cal.y - 2.0)
    rng = np.random.default_rng(33)
    worst = 0.0
    for tree, spec in oracle_scale_trees(20, seed=31):
        x = float(10 ** rng.uniform(-0.5, 0.5))
        c = calibrate(tree, spec, x)
        u = solve_primal_direct(tree, spec, x).value
        worst = max(worst, abs(u - c.dual.value - x * c.y))
    elapsed = time.perf_counter() - t0
    ok = bin_err <= 1e-8 and y_err <= 1e-8 and worst <= 1e-7 and elapsed < 120
    report(
        3,
        ok,
        f"binomial |u - closed form| {bin_err:.2e}, |y* - 2| {y_err:.2e}; "
        f"max |u - v(y*) - xy*| over 20 trees {worst:.2e}, {elapsed:.1f}s",
    )


@pytest.fixture(scope="module")
def reports():
    rng = np.random.default_rng(44)
    cases = [(binomial(), UtilitySpec.log())] + oracle_scale_trees(20, seed=41)
    return [duality_report(tree, spec, float(10 ** rng.uniform(-0.5, 0.5)), oracle=False) for tree, spec in cases]


def test_criterion_4_pointwise_optimality(report, reports):
    pdc = max(r.pdc_max_residual for r in reports)
    budget = max(r.budget_residual_unit for r in reports)
    report(4, pdc <= 1e-9 and budget <= 1e-10, f"max relative U'(c) residual {pdc:.2e}, max budget residual {budget:.2e}")


def test_criterion_5_wealth_structure(report, reports):
    mart = max(r.martingale_max_residual for r in reports)
    term = max(r.terminal_deflated_wealth_max for r in reports)
    decreasing = all(r.potential_decreasing for r in reports)
    ok = mart <= 1e-10 and term <= 1e-10 and decreasing
    report(5, ok, f"max martingale residual {mart:.2e}, terminal deflated wealth {term:.2e}, decreasing={decreasing}")


def superhedge_fixtures():
    tri = build_recombining(3, 3, [1.5, 1.0, 0.5], [0.25, 0.5, 0.25], alpha=0.1)
    bi3 = build_recombining(2, 3, [1.3, 0.8], [0.5, 0.5])
    rng = np.random.default_rng(66)
    trees = [("binomial", binomial()), ("trinomial", tri), ("binomial-3", bi3)]
    for i in range(6):
        T, k = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        trees.append((f"random-{i}", random_tree(rng, T, k, d=1 if k == 2 or i % 2 else 2)))
    out = []
    for name, tree in trees:
        claims = ["put:1", "call:1", "american-put:1.1", "consumption:0.5"]
        targets = [claim_target(tree, c) for c in claims]
        targets.append(rng.exponential(size=tree.n_nodes) * (rng.uniform(size=tree.n_nodes) < 0.4))
        out.extend((name, tree, b) for b in targets)
    return out


def test_criterion_6_superhedge(report):
    t0 = time.perf_counter()
    worst_w0, worst_rec, worst_inc = 0.0, 0.0, math.inf
    cases = superhedge_fixtures()
    for name, tree, b in cases:
        r = superhedge(tree, b)
        worst_w0 = max(worst_w0, abs(r.W0 - superhedge_oracle(tree, b)))
        worst_rec = max(worst_rec, r.reconstruction_residual(tree))
        worst_inc = min(worst_inc, r.min_increment(tree))
        assert np.all(r.W >= b)
        np.testing.assert_array_equal(smallest_dominating(tree, b), r.W)
    elapsed = time.perf_counter() - t0
    ok = worst_w0 <= 1e-12 and worst_rec <= 1e-10 and worst_inc >= -1e-10 and elapsed < 60
    report(
        6,
        ok,
        f"{len(cases)} targets: max |W0 - oracle| {worst_w0:.1e}, reconstruction {worst_rec:.1e}, "
        f"min A increment {worst_inc:.1e}, {elapsed:.1f}s",
    )


def test_criterion_7_strict_local_martingale(report):
    cfg = bl.SdeConfig(alpha=0.1, x=1.0, p=0.0, horizon=1.0, dt=0.01, n_paths=100_000, seed=1)
    t0 = time.perf_counter()
    batch = bl.simulate_bessel(cfg)
    bl.minimal_deflator(batch)
    est = bl.mean_ci(batch.Z0[:, batch.index(1.0)])
    elapsed = time.perf_counter() - t0
    joint = math.hypot(est.half_width, Z0_T1_HALF_WIDTH)
    ok = est.ci_hi < 0.75 and abs(est.mean - Z0_T1_MEAN) <= joint and elapsed < 120
    report(
        7,
        ok,
        f"E[Z0_1] = {est.mean:.5f} (99% CI upper {est.ci_hi:.5f}), oracle {Z0_T1_MEAN:.5f}, "
        f"|diff| {abs(est.mean - Z0_T1_MEAN):.5f} <= joint {joint:.5f}, {elapsed:.1f}s",
    )


def test_criterion_8_log_identities(report):
    t0 = time.perf_counter()
    cfg = bl.SdeConfig(alpha=0.1, x=1.0, p=0.0, horizon=1.0, dt=0.01, n_paths=10_000, seed=8)
    batch = bl.simulate_bessel(cfg)
    bl.minimal_deflator(batch)
    bl.log_optimal_policy(batch)
    ident = bl.log_identity_residuals(batch)
    inv = bl.pathwise_invariant_check(batch)
    bound = cfg.alpha * cfg.x * cfg.dt
    ref = bl.refinement_slope(cfg, [1e-2, 5e-3, 2.5e-3], n_paths=256)
    elapsed = time.perf_counter() - t0
    ok = (
        max(ident.values()) <= 1e-12
        and inv <= bound
        and all(abs(s - 2.0) <= 0.2 for s in ref["slope"])
        and elapsed < 60
    )
    report(
        8,
        ok,
        f"identities {max(ident.values()):.1e}, |M - x| {inv:.2e} <= {bound:.0e}, "
        f"slopes {[round(s, 4) for s in ref['slope']]}, {elapsed:.1f}s",
    )


def test_criterion_9_determinism(report, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"alpha": 0.1, "dt": 0.01, "n_paths": 2000}')
    base = tmp_path / "base.json"
    base.write_text('{"command": "tree-duality", "tree": "trinomial", "utility": "power", "p": 0.5}')
    commands = {
        "tree-duality": ["tree-duality", "--tree", "random:2:3", "--utility", "log"],
        "superhedge": ["superhedge", "--tree", "trinomial", "--claim", "american-put:1"],
        "bessel": ["bessel", "--config", str(cfg), "--psi-grid", "0,0.5"],
        "conjugate": ["conjugate", "--utility", "power", "--p", "-1", "--grid", "0.1:10:7"],
        "sweep": ["sweep", "--base", str(base), "--axis", "x=0.5,1,2"],
    }
    mismatched, n_files = [], 0
    for name, args in commands.items():
        runs = []
        for rep in range(2):
            out = tmp_path / f"{name}-{rep}"
            assert main([*args, "--seed", "7", "--out", str(out)]) == 0
            runs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))})
        assert runs[0], f"{name} wrote no CSV"
        n_files += len(runs[0])
        if runs[0] != runs[1]:
            mismatched.append(name)
    report(9, not mismatched, f"{len(commands)} commands, {n_files} CSV files, mismatched: {mismatched or 'none'}")
