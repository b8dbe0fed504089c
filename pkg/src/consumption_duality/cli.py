"""Command-line driver: runs one experiment and writes JSON and CSV artifacts.

Every run writes ``summary.json`` (results plus a ``checks`` array),
one or more CSV tables and ``metadata.json`` (timestamps and versions, the
only non-deterministic file).  Exit status: 0 when every check passes, 1 on
a failed check or numerical error, 2 on input/parse errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import bessel as bl
from .duality import duality_report
from .errors import DualityLabError
from .superhedge import claim_target, superhedge
from .tree import EventTree, load_tree, random_tree, tree_from_dict, with_clock
from .utility import UtilitySpec, numeric_conjugate

OUT_ENV = "DUALITY_LAB_OUT"
EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

DEFAULT_TOLERANCES = {
    "conjugacy_gap": 1e-8,
    "pdc_residual": 1e-9,
    "budget_residual": 1e-10,
    "martingale_residual": 1e-10,
    "terminal_potential": 1e-10,
    "primal_dual_gap": 1e-7,
    "domination": 1e-12,
    "reconstruction": 1e-10,
    "increment_floor": 1e-10,
    "identity": 1e-12,
    "m_residual": 1e-7,
    "potential_decay": 1e-12,
    "slope_low": 1.8,
    "slope_high": 2.2,
    "conjugate": 1e-10,
}


class InputError(Exception):
    """Bad user input: unreadable file, malformed config or option."""


@dataclass
class RunResult:
    command: str
    results: dict
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    error: str | None = None

    def check(self, name, value, threshold, passed):
        self.checks.append(
            {"name": name, "value": _clean(value), "threshold": _clean(threshold), "pass": bool(passed)}
        )

    def upper(self, name, value, threshold):
        self.check(name, value, threshold, value <= threshold)

    @property
    def failures(self) -> list[str]:
        return [c["name"] for c in self.checks if not c["pass"]]

    @property
    def passed(self) -> bool:
        return self.error is None and not self.failures

    def summary(self) -> dict:
        return {
            "command": self.command,
            "passed": self.passed,
            "failures": self.failures,
            "error": self.error,
            "checks": self.checks,
            "results": _clean(self.results),
        }


def _clean(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


# --------------------------------------------------------------------------
# input helpers
# --------------------------------------------------------------------------
def _read_structured(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:  # noqa: BLE001 - any parser failure is an input error
        raise InputError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a key/value mapping")
    return data


def resolve_tree(ref: str, seed: int) -> EventTree:
    """Bundled fixture name, ``random:T:K[:D]`` or a JSON file path."""
    if ref in ("binomial", "trinomial"):
        text = resources.files("consumption_duality").joinpath(f"fixtures/{ref}.json").read_text()
        return tree_from_dict(json.loads(text))
    if ref.startswith("random:"):
        try:
            dims = [int(v) for v in ref.split(":")[1:]]
            T, k, d = (dims + [1])[:3]
        except ValueError:
            raise InputError(f"bad random tree spec {ref!r}; use random:T:K[:D]") from None
        return random_tree(np.random.default_rng(seed), T, k, d)
    try:
        return load_tree(ref)
    except OSError as exc:
        raise InputError(f"cannot read tree {ref}: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"invalid tree file {ref}: {exc}") from exc


def resolve_utility(kind: str, p: float | None, table: str | None) -> UtilitySpec:
    if kind == "log":
        return UtilitySpec.log()
    if kind == "power":
        if p is None:
            raise InputError("power utility needs --p")
        return UtilitySpec.crra(float(p))
    if kind == "table":
        if not table:
            raise InputError("tabulated utility needs --table FILE")
        try:
            return UtilitySpec.from_table_file(table)
        except OSError as exc:
            raise InputError(f"cannot read table {table}: {exc}") from exc
        except ValueError as exc:
            raise InputError(f"invalid utility table {table}: {exc}") from exc
    raise InputError(f"unknown utility {kind!r}")


def parse_grid(spec: str) -> np.ndarray:
    """``lo:hi:n`` (log-spaced, inclusive) or a comma-separated list."""
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            grid = np.geomspace(float(lo), float(hi), int(n))
        else:
            grid = np.array([float(v) for v in spec.split(",") if v.strip()])
    except ValueError:
        raise InputError(f"bad grid spec {spec!r}") from None
    if grid.size == 0 or np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise InputError("grid must contain positive finite values")
    return grid


def _tolerances(overrides: dict) -> dict:
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in overrides.items():
        if k not in tol:
            raise InputError(f"unknown tolerance {k!r}")
        v = float(v)
        if not v > 0:
            raise InputError(f"tolerance {k} must be positive")
        tol[k] = v
    return tol


# --------------------------------------------------------------------------
# commands (each takes a flat option dict)
# --------------------------------------------------------------------------
def run_tree_duality(opts: dict) -> RunResult:
    tol = _tolerances(opts.get("tol", {}))
    seed = int(opts.get("seed", 0))
    tree = resolve_tree(str(opts.get("tree", "binomial")), seed)
    if opts.get("alpha") is not None or opts.get("dt") is not None:
        tree = with_clock(tree, opts.get("alpha"), opts.get("dt"))
    spec = resolve_utility(opts.get("utility", "log"), opts.get("p"), opts.get("table"))
    x = float(opts.get("x", 1.0))
    if not x > 0:
        raise InputError("x must be positive")
    rep = duality_report(tree, spec, x, oracle=opts.get("oracle"))

    res = RunResult("tree-duality", rep.flat_row())
    res.results["potential"] = rep.potential
    res.results["utility"] = rep.utility
    res.results["tree"] = rep.tree
    res.upper("conjugacy_gap", abs(rep.conjugacy_gap), tol["conjugacy_gap"])
    res.upper("pdc_residual", rep.pdc_max_residual, tol["pdc_residual"])
    res.upper("budget_residual", rep.budget_residual_unit, tol["budget_residual"])
    res.upper("martingale_residual", rep.martingale_max_residual, tol["martingale_residual"])
    res.upper("terminal_potential", rep.terminal_deflated_wealth_max, tol["terminal_potential"])
    res.check("potential_decreasing", rep.potential_decreasing, True, rep.potential_decreasing)
    res.check("hedge_admissible", rep.hedge_admissible, True, rep.hedge_admissible)
    if rep.u_direct is not None:
        gap = abs(rep.u_direct - rep.v_of_y - rep.x * rep.y_star)
        res.results["primal_dual_gap"] = gap
        res.upper("primal_dual_gap", gap, tol["primal_dual_gap"])

    d = tree.n_assets
    header = ["node", "t", "parent", "prob"] + [f"S{j}" for j in range(d)] + ["Z", "c", "X", "M"]
    header += [f"H{j}" for j in range(d)]
    rows = []
    for i in range(tree.n_nodes):
        rows.append(
            [i, int(tree.t[i]), int(tree.parent[i]), float(tree.prob[i])]
            + [float(v) for v in tree.prices[i]]
            + [float(rep.Z[i]), float(rep.c[i]), float(rep.X[i]), float(rep.M[i])]
            + [float(v) for v in rep.H[i]]
        )
    res.tables["nodes.csv"] = (header, rows)
    res.tables["potential.csv"] = (["t", "expected_deflated_wealth"], [[t, v] for t, v in enumerate(rep.potential)])
    return res


def _claim_from(opts: dict, tree: EventTree) -> np.ndarray:
    claim = str(opts.get("claim", ""))
    if not claim:
        raise InputError("superhedge needs --claim")
    path = Path(claim)
    if path.suffix.lower() == ".json":
        data = _read_structured(path) if path.exists() else None
        if data is None:
            raise InputError(f"cannot read claim file {claim}")
        b = np.zeros(tree.n_nodes)
        try:
            for k, v in data.items():
                b[int(k)] = float(v)
        except (ValueError, IndexError) as exc:
            raise InputError(f"claim file {claim}: {exc}") from exc
        return b
    try:
        return claim_target(tree, claim)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def run_superhedge(opts: dict) -> RunResult:
    tol = _tolerances(opts.get("tol", {}))
    tree = resolve_tree(str(opts.get("tree", "binomial")), int(opts.get("seed", 0)))
    b = _claim_from(opts, tree)
    sh = superhedge(tree, b)
    dom = float(np.min(sh.W - b))
    recon = sh.reconstruction_residual(tree)
    inc = sh.min_increment(tree)
    res = RunResult("superhedge", {"W0": sh.W0, "claim": str(opts.get("claim")), "tree": tree.describe()})
    res.check("domination", dom, -tol["domination"], dom >= -tol["domination"])
    res.upper("reconstruction", recon, tol["reconstruction"])
    res.check("A_nondecreasing", inc, -tol["increment_floor"], inc >= -tol["increment_floor"])
    d = tree.n_assets
    header = ["node", "t", "parent", "target", "W", "A"] + [f"phi{j}" for j in range(d)]
    rows = [
        [i, int(tree.t[i]), int(tree.parent[i]), float(b[i]), float(sh.W[i]), float(sh.A[i])]
        + [float(v) for v in sh.phi[i]]
        for i in range(tree.n_nodes)
    ]
    res.tables["nodes.csv"] = (header, rows)
    return res


_STAT_HEADER = ["time", "mean", "ci_lo", "ci_hi", "target"]


def _stat_rows(rows):
    return [[r[k] for k in _STAT_HEADER] for r in rows]


def run_bessel(opts: dict) -> RunResult:
    tol = _tolerances(opts.get("tol", {}))
    data = dict(opts.get("config") or {})
    if opts.get("config_path"):
        data = {**_read_structured(opts["config_path"]), **data}
    if opts.get("seed_given"):
        data["seed"] = int(opts["seed"])
    psi_grid = data.pop("psi_grid", opts.get("psi_grid"))
    refine = bool(data.pop("refine", opts.get("refine", False)))
    try:
        cfg = bl.SdeConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid bessel config: {exc}") from exc

    batch = bl.simulate_bessel(cfg)
    bl.minimal_deflator(batch)
    bl.attach_psi_deflator(batch)
    T = float(batch.times[-1])
    probe = [t for t in (0.25, 0.5, 0.75, 1.0, 2.0, 5.0) if t < T - 1e-12] + [T]
    probe = [float(batch.times[batch.index_near(t)]) for t in probe]
    probe = sorted(set(probe))

    res = RunResult("bessel", {"config": cfg.to_dict(), "scheme": batch.scheme, "summary": bl.batch_summary(batch)})
    expect = bl.expectation_profile(batch, [0.0] + probe)
    res.tables["z0_expectation.csv"] = (_STAT_HEADER, _stat_rows(expect))
    if T >= 0.5:
        last = bl.expectation_deficit(batch, T)
        res.results["z0_final"] = {"t": T, "mean": last.estimate.mean, "ci_hi": last.estimate.ci_hi}
        res.check("z0_strict_local_martingale", last.estimate.ci_hi, 1.0, last.strict_certificate)
    sm = bl.second_moment(batch, T)
    res.results["z0_second_moment"] = {"mean": sm.mean, "ci_lo": sm.ci_lo, "ci_hi": sm.ci_hi}

    inc_z = bl.martingale_increment_test(batch, "Z0", probe)
    inc_rows = [["Z0", r.t0, r.t1, r.bin, r.n, r.mean, r.sd, r.z] for r in inc_z]

    if cfg.p == 0:
        bl.log_optimal_policy(batch)
        ident = bl.log_identity_residuals(batch)
        res.results.update(ident)
        res.upper("c_equals_alpha_x", ident["c_minus_alpha_x"], tol["identity"])
        res.upper("xz_equals_discounted_x", ident["xz_minus_target"], tol["identity"])
        m_res = bl.pathwise_invariant_check(batch)
        res.results["m_hat_residual"] = m_res
        res.results["quadrature_bound"] = bl.quadrature_bound(cfg.alpha, cfg.x, cfg.dt, T)
        res.upper("m_hat_residual", m_res, tol["m_residual"])
        pot = bl.potential_decay(batch, [0.0] + probe)
        res.tables["potential.csv"] = (_STAT_HEADER, _stat_rows(pot))
        pot_err = max(abs(r["mean"] - r["target"]) for r in pot)
        res.results["potential_target_T"] = pot[-1]["target"]
        res.results["potential_mean_T"] = pot[-1]["mean"]
        res.upper("potential_decay", pot_err, tol["potential_decay"])
        res.results["budget"] = bl.budget_saturation(batch)
        inc_m = bl.martingale_increment_test(batch, "M_hat", probe)
        inc_rows += [["M_hat", r.t0, r.t1, r.bin, r.n, r.mean, r.sd, r.z] for r in inc_m]
        worst = max(abs(r.z) for r in inc_m)
        res.upper("m_hat_increment_z", worst, 3.0)
        if refine:
            ref = bl.refinement_slope(cfg, [cfg.dt, cfg.dt / 2, cfg.dt / 4])
            res.results["refinement"] = ref
            lo, hi = tol["slope_low"], tol["slope_high"]
            for j, s in enumerate(ref["slope"]):
                res.check(f"refinement_slope_{j}", s, [lo, hi], lo <= s <= hi)
            res.tables["refinement.csv"] = (["dt", "residual"], [list(r) for r in zip(ref["dt"], ref["residual"])])
    res.tables["increments.csv"] = (["process", "t0", "t1", "bin", "n", "mean", "sd", "z"], inc_rows)

    if psi_grid is not None:
        grid = [float(v) for v in (psi_grid.split(",") if isinstance(psi_grid, str) else psi_grid)]
        scan = bl.power_dual_scan(batch, grid)
        res.tables["dual_scan.csv"] = (["psi", "mean", "ci_lo", "ci_hi", "sd"], [list(r.values()) for r in scan])
        zero = [r for r in scan if r["psi"] == 0.0]
        if zero:
            others = [r["ci_hi"] for r in scan if r["psi"] != 0.0]
            ok = all(zero[0]["mean"] <= v for v in others)
            res.check("dual_scan_min_at_zero", zero[0]["mean"], min(others, default=math.inf), ok)
    return res


def run_conjugate(opts: dict) -> RunResult:
    tol = _tolerances(opts.get("tol", {}))
    spec = resolve_utility(opts.get("utility", "log"), opts.get("p"), opts.get("table"))
    grid = parse_grid(str(opts.get("grid", "0.01:100:41")))
    V = np.asarray(spec.V(grid), dtype=float)
    I = np.asarray(spec.I(grid), dtype=float)
    numeric = np.array([numeric_conjugate(spec, y) for y in grid])
    fenchel = np.asarray(spec.U(I), dtype=float) - grid * I
    scale = np.maximum(1.0, np.abs(V))
    res = RunResult("conjugate", {"utility": spec.describe(), "n": int(grid.size)})
    res.upper("numeric_vs_closed_form", float(np.max(np.abs(V - numeric) / scale)), tol["conjugate"])
    res.upper("fenchel_equality", float(np.max(np.abs(V - fenchel) / scale)), tol["conjugate"])
    rows = [[float(a), float(b), float(c), float(d), float(e)] for a, b, c, d, e in zip(grid, V, I, numeric, fenchel)]
    res.tables["conjugate.csv"] = (["y", "V", "I", "V_numeric", "U_of_I_minus_yI"], rows)
    return res


RUNNERS = {
    "tree-duality": run_tree_duality,
    "superhedge": run_superhedge,
    "bessel": run_bessel,
    "conjugate": run_conjugate,
}

_SWEEP_COLUMNS = {
    "tree-duality": ["x", "y_star", "u_of_x", "v_of_y", "u_direct", "conjugacy_gap"],
    "superhedge": ["W0"],
    "bessel": ["potential_target_T", "potential_mean_T", "m_hat_residual"],
    "conjugate": [],
}


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def run_sweep(opts: dict, out: Path) -> RunResult:
    base = _read_structured(opts["base"]) if opts.get("base") else {}
    command = base.get("command")
    if command not in RUNNERS:
        raise InputError(f"sweep base config needs 'command' in {sorted(RUNNERS)}")
    axis = str(opts.get("axis", ""))
    name, _, values = axis.partition("=")
    vals = [_coerce(v.strip()) for v in values.split(",") if v.strip()]
    if not name or not vals:
        raise InputError("sweep needs a non-empty axis NAME=V1,V2,...")
    cols = [c for c in _SWEEP_COLUMNS[command] if c != name]
    header = [name, "status", "failures"] + cols
    rows, failed = [], []
    for v in vals:
        sub = {k: val for k, val in base.items() if k != "command"}
        sub["tol"] = {**base.get("tol", {}), **opts.get("tol", {})}
        if "seed" in opts:
            sub.setdefault("seed", opts["seed"])
        if command == "bessel":
            sub["config"] = {**sub.get("config", {}), name: v}
            if opts.get("seed_given"):
                sub["seed_given"], sub["seed"] = True, opts["seed"]
        else:
            sub[name] = v
        try:
            r = RUNNERS[command](sub)
            write_outputs(r, out / f"{name}={v}")
            status = "ok" if r.passed else "failed"
            row = [v, status, ";".join(r.failures)] + [_clean(r.results.get(c, "")) for c in cols]
        except (DualityLabError, ArithmeticError, InputError, ValueError) as exc:
            status = "error"
            row = [v, status, f"{type(exc).__name__}: {exc}"] + [""] * len(cols)
        if status != "ok":
            failed.append(str(v))
        rows.append(row)
    res = RunResult("sweep", {"base_command": command, "axis": name, "values": vals})
    res.check("all_cells_pass", len(failed), 0, not failed)
    res.results["failed_cells"] = failed
    res.tables["sweep.csv"] = (header, rows)
    return res


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------
def _cell(v):
    v = _clean(v)
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else v


def write_outputs(res: RunResult, out: Path, meta: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(res.summary(), indent=2, sort_keys=True) + "\n")
    for name, (header, rows) in res.tables.items():
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    if meta is not None:
        (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _tol_pairs(items) -> dict:
    out = {}
    for item in items or []:
        k, sep, v = item.partition("=")
        if not sep:
            raise InputError(f"bad --tol {item!r}; use NAME=VALUE")
        try:
            out[k] = float(v)
        except ValueError:
            raise InputError(f"bad --tol value {v!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="duality-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./duality-lab-out)")
        p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
        p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a check threshold")

    p = sub.add_parser("tree-duality", help="primal/dual solve and duality residuals on an event tree")
    common(p)
    p.add_argument("--tree", default="binomial", help="JSON file, 'binomial', 'trinomial' or random:T:K[:D]")
    p.add_argument("--utility", choices=["log", "power", "table"], default="log")
    p.add_argument("--p", type=float)
    p.add_argument("--table", help="two-column x U(x) table for --utility table")
    p.add_argument("--x", type=float, default=1.0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--oracle", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("superhedge", help="smallest dominating process and its decomposition")
    common(p)
    p.add_argument("--tree", default="binomial")
    p.add_argument("--claim", required=True, help="put:K, call:K, american-put:K, consumption:RATE or a JSON node map")

    p = sub.add_parser("bessel", help="Monte Carlo lab for the Bessel-driven market")
    common(p)
    p.add_argument("--config", required=True, help="JSON or YAML config file")
    p.add_argument("--psi-grid", help="comma-separated constant psi values for the dual scan")
    p.add_argument("--refine", action="store_true", help="also measure the quadrature refinement slope")

    p = sub.add_parser("conjugate", help="tabulate the convex conjugate over a y grid")
    common(p)
    p.add_argument("--utility", choices=["log", "power", "table"], default="log")
    p.add_argument("--p", type=float)
    p.add_argument("--table")
    p.add_argument("--grid", default="0.01:100:41", help="lo:hi:n (log-spaced) or comma list")

    p = sub.add_parser("sweep", help="repeat a command across one parameter axis")
    common(p)
    p.add_argument("--base", required=True, help="JSON/YAML with 'command' and its options")
    p.add_argument("--axis", required=True, help="NAME=V1,V2,...")
    return ap


def _options(args) -> dict:
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "out", "tol", "seed")}
    opts["seed_given"] = args.seed is not None
    opts["seed"] = 0 if args.seed is None else args.seed
    opts["tol"] = _tol_pairs(args.tol)
    if args.command == "bessel":
        opts["config_path"] = opts.pop("config")
    return opts


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    out = Path(args.out or os.environ.get(OUT_ENV) or "duality-lab-out")
    started = time.time()
    meta = {
        "argv": argv,
        "started_utc": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    try:
        opts = _options(args)
        if args.command == "sweep":
            res = run_sweep(opts, out)
        else:
            res = RUNNERS[args.command](opts)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DualityLabError, ArithmeticError, ValueError) as exc:
        res = RunResult(args.command, {}, error=f"{type(exc).__name__}: {exc}")
    meta["elapsed_s"] = round(time.time() - started, 3)
    try:
        write_outputs(res, out, meta)
    except OSError as exc:
        print(f"cannot write outputs to {out}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    status = "PASS" if res.passed else "FAIL"
    print(f"{args.command}: {status} ({len(res.checks)} checks) -> {out}")
    for name in res.failures:
        print(f"  failed: {name}")
    if res.error:
        print(f"  error: {res.error}")
    return EXIT_OK if res.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
