"""Monte Carlo lab for a stock driven by a three-dimensional Bessel process.

``B = |(1, 0, 0) + W3|`` for a 3-dimensional Brownian motion ``W3``, sampled
exactly on the time grid, solves ``dB = dt / B + dW`` with ``B0 = 1``.  The
minimal deflator is ``Z0 = 1 / B``, a strict local martingale.  An
orthogonal Brownian motion ``W_perp`` generates the other deflators
``Z_psi = Z0 * exp(-int psi dW_perp - 1/2 int psi^2 dt)``.

For log utility with discount rate ``alpha`` the optimal plan is explicit:
``c = alpha exp(-alpha t) x / Z0`` and ``X = exp(-alpha t) x / Z0``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.stats import norm

from . import rng as crng
from .errors import DomainError, StatisticsError

DEFAULT_LEVEL = 0.99
DEFAULT_CHUNK = 32768


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class SdeConfig:
    alpha: float = 0.1
    x: float = 1.0
    p: float = 0.0
    horizon: float = 1.0
    dt: float = 0.01
    n_paths: int = 10_000
    seed: int = 0
    psi: float | str | dict = 0.0
    vol_model: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    rho: float = 0.0
    y: float | None = None
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.x > 0:
            raise ValueError("x must be positive")
        if not self.p < 1:
            raise DomainError(f"CRRA exponent must satisfy p < 1 (got {self.p})")
        if not (self.horizon > 0 and 0 < self.dt <= self.horizon):
            raise ValueError("need 0 < dt <= horizon")
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be >= 1")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if self.y is not None and not self.y > 0:
            raise ValueError("y must be positive")
        if int(self.chunk_size) < 1:
            raise ValueError("chunk_size must be >= 1")
        crng.check_seed(self.seed)
        _psi_schedule(self.psi, np.array([0.0, self.horizon]))
        _check_vol(self.vol_model)

    @classmethod
    def from_dict(cls, data: dict) -> SdeConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        kw = dict(data)
        for k in ("alpha", "x", "p", "horizon", "dt", "rho"):
            if k in kw:
                kw[k] = float(kw[k])
        for k in ("n_paths", "seed", "chunk_size"):
            if k in kw:
                kw[k] = int(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> SdeConfig:
        d = self.to_dict()
        d.update(changes)
        return SdeConfig.from_dict(d)

    @property
    def scan_level(self) -> float:
        """Dual multiplier used by scans: ``y`` if given, else ``1 / (alpha x)``."""
        return self.y if self.y is not None else 1.0 / (self.alpha * self.x)


def load_config(path) -> SdeConfig:
    """Read an :class:`SdeConfig` from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a key/value mapping")
    return SdeConfig.from_dict(data)


def _check_vol(model: dict) -> None:
    if not isinstance(model, dict) or model.get("kind") not in ("constant", "tabulated"):
        raise ValueError("vol_model must be {'kind': 'constant' | 'tabulated', ...}")
    if model["kind"] == "constant":
        if not float(model.get("value", 1.0)) > 0:
            raise ValueError("constant volatility must be positive")
    else:
        t = np.asarray(model.get("times", []), dtype=float)
        v = np.asarray(model.get("values", []), dtype=float)
        if t.size == 0 or t.shape != v.shape or np.any(v <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("tabulated volatility needs ascending times and positive values")


def _psi_schedule(psi, times: np.ndarray) -> np.ndarray:
    """Value of the integrand on each step ``[t_k, t_{k+1})`` (left endpoint)."""
    left = times[:-1]
    if isinstance(psi, str):
        if psi != "zero":
            raise ValueError(f"unknown psi spec {psi!r}")
        return np.zeros_like(left)
    if isinstance(psi, dict):
        t = np.asarray(psi.get("times", []), dtype=float)
        v = np.asarray(psi.get("values", []), dtype=float)
        if t.size == 0 or t.shape != v.shape or t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("tabulated psi needs times starting at 0, ascending, one value each")
        return v[np.searchsorted(t, left, side="right") - 1]
    value = float(psi)
    if not math.isfinite(value):
        raise ValueError("psi must be finite")
    return np.full_like(left, value)


def time_grid(horizon: float, dt: float) -> np.ndarray:
    n = int(math.floor(horizon / dt + 1e-9))
    grid = np.arange(n + 1) * dt
    if horizon - grid[-1] > 1e-9 * horizon:
        grid = np.append(grid, horizon)
    else:
        grid[-1] = horizon
    return grid


# --------------------------------------------------------------------------
# paths
# --------------------------------------------------------------------------
@dataclass
class PathBatch:
    config: SdeConfig
    times: np.ndarray
    B: np.ndarray
    W_perp: np.ndarray
    Z0: np.ndarray | None = None
    Z_psi: np.ndarray | None = None
    c_hat: np.ndarray | None = None
    X_hat: np.ndarray | None = None
    M_hat: np.ndarray | None = None
    scheme: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.B.shape[0]

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the time grid")
        return k

    def index_near(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def process(self, name: str) -> np.ndarray:
        arr = getattr(self, name, None) if name in _PROCESSES else None
        if arr is None:
            raise ValueError(f"process {name!r} is not stored in this batch")
        return arr


_PROCESSES = ("B", "W_perp", "Z0", "Z_psi", "c_hat", "X_hat", "M_hat")


def _simulate_chunk(seed, times, start, n):
    steps = np.sqrt(np.diff(times))
    pos = np.zeros((n, 3))
    pos[:, 0] = 1.0
    B = np.empty((n, times.size))
    Wp = np.empty((n, times.size))
    B[:, 0] = 1.0
    Wp[:, 0] = 0.0
    wp = np.zeros(n)
    for k, h in enumerate(steps):
        z = crng.normals(seed, k, start, n)
        pos += h * z[:, :3]
        wp = wp + h * z[:, 3]
        B[:, k + 1] = np.sqrt(np.einsum("ij,ij->i", pos, pos))
        Wp[:, k + 1] = wp
    return B, Wp


def simulate_bessel(config: SdeConfig, workers: int = 1) -> PathBatch:
    """Exact-in-distribution Bessel paths on the configured grid.

    Path ``i`` at step ``k`` consumes the four normals keyed by
    ``(seed, i, k)``: three move the 3-d Brownian motion, the fourth moves
    ``W_perp``.  Results do not depend on ``workers`` or ``chunk_size``.
    """
    times = time_grid(config.horizon, config.dt)
    n = int(config.n_paths)
    B = np.empty((n, times.size))
    Wp = np.empty((n, times.size))
    starts = list(range(0, n, int(config.chunk_size)))

    def run(start):
        m = min(int(config.chunk_size), n - start)
        B[start : start + m], Wp[start : start + m] = _simulate_chunk(config.seed, times, start, m)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    scheme = {
        "bessel": "norm of 3-d Brownian motion from (1,0,0), exact Gaussian increments",
        "rng": "Philox-4x64 keyed by seed, counter (path, step); Box-Muller",
        "seed": int(config.seed),
        "n_steps": int(times.size - 1),
    }
    return PathBatch(config, times, B, Wp, scheme=scheme)


def minimal_deflator(batch: PathBatch) -> np.ndarray:
    """``Z0 = 1 / B`` on every path (stored on the batch and returned)."""
    batch.Z0 = 1.0 / batch.B
    return batch.Z0


def deflator_with_psi(batch: PathBatch, psi) -> np.ndarray:
    """``Z0 * exp(-int psi dW_perp - 1/2 int psi^2 dt)`` with ``psi`` constant per step."""
    Z0 = batch.Z0 if batch.Z0 is not None else minimal_deflator(batch)
    sched = _psi_schedule(psi, batch.times)
    if not np.any(sched):
        return Z0.copy()
    dW = np.diff(batch.W_perp, axis=1)
    expo = -(dW * sched) - 0.5 * sched**2 * np.diff(batch.times)
    log_e = np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(expo, axis=1)], axis=1)
    return Z0 * np.exp(log_e)


def attach_psi_deflator(batch: PathBatch) -> np.ndarray | None:
    """Store ``Z_psi`` for the configured integrand, unless it is identically zero."""
    sched = _psi_schedule(batch.config.psi, batch.times)
    batch.Z_psi = deflator_with_psi(batch, batch.config.psi) if np.any(sched) else None
    return batch.Z_psi


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    ci_lo: float
    ci_hi: float
    sd: float
    n: int
    level: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_hi - self.ci_lo)


def mean_ci(samples, level: float = DEFAULT_LEVEL, min_n: int = 2) -> MeanEstimate:
    """Sample mean with a normal-approximation confidence interval."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < max(2, min_n):
        raise StatisticsError(f"need at least {max(2, min_n)} samples, got {s.size}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = float(np.mean(s))
    sd = float(np.std(s, ddof=1))
    h = float(norm.ppf(0.5 + level / 2)) * sd / math.sqrt(s.size)
    return MeanEstimate(m, m - h, m + h, sd, int(s.size), level)


@dataclass(frozen=True)
class Deficit:
    t: float
    estimate: MeanEstimate

    @property
    def deficit(self) -> float:
        return 1.0 - self.estimate.mean

    @property
    def strict_certificate(self) -> bool:
        """Upper confidence bound below 1."""
        return self.estimate.ci_hi < 1.0


def expectation_deficit(
    batch: PathBatch, t: float, level: float = DEFAULT_LEVEL, min_paths: int = 100
) -> Deficit:
    """Estimate ``E[Z0_t]`` and the deficit ``1 - E[Z0_t]``."""
    Z0 = batch.Z0 if batch.Z0 is not None else minimal_deflator(batch)
    k = batch.index(t)
    if batch.n_paths < min_paths:
        raise StatisticsError(f"{batch.n_paths} paths is below the minimum of {min_paths} for a CI")
    if k == 0:
        return Deficit(0.0, MeanEstimate(1.0, 1.0, 1.0, 0.0, batch.n_paths, level))
    return Deficit(float(batch.times[k]), mean_ci(Z0[:, k], level))


def expectation_profile(batch: PathBatch, times, level: float = DEFAULT_LEVEL) -> list[dict]:
    rows = []
    for t in times:
        d = expectation_deficit(batch, t, level)
        e = d.estimate
        rows.append({"time": d.t, "mean": e.mean, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi, "target": ""})
    return rows


def second_moment(batch: PathBatch, t: float, level: float = DEFAULT_LEVEL) -> MeanEstimate:
    """``E[(Z0_t)^2]`` with a confidence interval."""
    Z0 = batch.Z0 if batch.Z0 is not None else minimal_deflator(batch)
    return mean_ci(Z0[:, batch.index(t)] ** 2, level)


# --------------------------------------------------------------------------
# log utility
# --------------------------------------------------------------------------
def log_optimal_policy(batch: PathBatch) -> PathBatch:
    """Fill the optimal log-utility consumption, wealth and gains processes.

    ``M_hat = X_hat Z0 + int_0^t c_hat Z0 ds``, the integral by the
    trapezoid rule on the time grid.
    """
    cfg = batch.config
    if cfg.p != 0:
        raise DomainError("the closed-form policy is for log utility (p = 0)")
    Z0 = batch.Z0 if batch.Z0 is not None else minimal_deflator(batch)
    disc = np.exp(-cfg.alpha * batch.times)
    batch.X_hat = disc * cfg.x / Z0
    batch.c_hat = cfg.alpha * batch.X_hat
    integral = cumulative_trapezoid(batch.c_hat * Z0, batch.times, axis=1, initial=0.0)
    batch.M_hat = batch.X_hat * Z0 + integral
    return batch


def _require_policy(batch: PathBatch):
    if batch.M_hat is None:
        raise ValueError("run log_optimal_policy first")


def log_identity_residuals(batch: PathBatch) -> dict:
    """Largest pathwise deviations of ``c = alpha X`` and ``X Z0 = x exp(-alpha t)``."""
    _require_policy(batch)
    cfg = batch.config
    target = cfg.x * np.exp(-cfg.alpha * batch.times)
    return {
        "c_minus_alpha_x": float(np.max(np.abs(batch.c_hat - cfg.alpha * batch.X_hat))),
        "xz_minus_target": float(np.max(np.abs(batch.X_hat * batch.Z0 - target))),
    }


def pathwise_invariant_check(batch: PathBatch) -> float:
    """``max |M_hat - x|`` over all paths and grid times."""
    _require_policy(batch)
    return float(np.max(np.abs(batch.M_hat - batch.config.x)))


def quadrature_bound(alpha: float, x: float, dt: float, horizon: float) -> float:
    """Trapezoid error bound for ``int_0^T alpha x exp(-alpha s) ds`` with step ``dt``."""
    return alpha**3 * x * dt**2 * horizon / 12.0


def potential_decay(batch: PathBatch, times=None) -> list[dict]:
    """``E[X_hat Z0]`` against ``x exp(-alpha t)`` at the requested grid times."""
    _require_policy(batch)
    cfg = batch.config
    ks = range(batch.times.size) if times is None else [batch.index(t) for t in times]
    rows = []
    for k in ks:
        est = mean_ci(batch.X_hat[:, k] * batch.Z0[:, k]) if batch.n_paths > 1 else None
        m = est.mean if est else float(batch.X_hat[0, k] * batch.Z0[0, k])
        rows.append(
            {
                "time": float(batch.times[k]),
                "mean": m,
                "ci_lo": est.ci_lo if est else m,
                "ci_hi": est.ci_hi if est else m,
                "target": cfg.x * math.exp(-cfg.alpha * batch.times[k]),
            }
        )
    return rows


def budget_saturation(batch: PathBatch) -> dict:
    """Truncated budget ``E[int_0^T c_hat Z0 dt]`` plus the closed-form tail ``x exp(-alpha T)``."""
    _require_policy(batch)
    cfg = batch.config
    per_path = trapezoid(batch.c_hat * batch.Z0, batch.times, axis=1)
    truncated = float(np.mean(per_path))
    T = float(batch.times[-1])
    tail = cfg.x * math.exp(-cfg.alpha * T)
    return {
        "truncated": truncated,
        "truncated_target": cfg.x * (1.0 - math.exp(-cfg.alpha * T)),
        "tail": tail,
        "total": truncated + tail,
        "residual": abs(truncated + tail - cfg.x),
    }


# --------------------------------------------------------------------------
# dual scan and martingale tests
# --------------------------------------------------------------------------
def _conjugate(p: float, y):
    if p == 0:
        return -np.log(y) - 1.0
    q = p / (p - 1.0)
    return -np.power(y, q) / q


def power_dual_scan(batch: PathBatch, psi_grid, y: float | None = None, level: float = DEFAULT_LEVEL) -> list[dict]:
    """Monte Carlo dual objective ``E[int_0^T exp(-alpha t) V(y Z_psi exp(alpha t)) dt]`` per constant ``psi``.

    All ``psi`` values share the batch's paths (common random numbers).
    ``p = 0`` uses the log conjugate.
    """
    cfg = batch.config
    if not cfg.p < 1:
        raise DomainError(f"CRRA exponent must satisfy p < 1 (got {cfg.p})")
    psi_grid = [float(v) for v in psi_grid]
    if not psi_grid:
        raise ValueError("psi_grid is empty")
    y = cfg.scan_level if y is None else float(y)
    growth = np.exp(cfg.alpha * batch.times)
    rows = []
    for psi in psi_grid:
        Z = deflator_with_psi(batch, psi)
        integrand = _conjugate(cfg.p, y * Z * growth) / growth
        est = mean_ci(trapezoid(integrand, batch.times, axis=1), level)
        rows.append({"psi": psi, "mean": est.mean, "ci_lo": est.ci_lo, "ci_hi": est.ci_hi, "sd": est.sd})
    return rows


@dataclass(frozen=True)
class IncrementZ:
    t0: float
    t1: float
    bin: int
    n: int
    mean: float
    sd: float
    z: float


def martingale_increment_test(
    batch: PathBatch,
    name: str,
    times,
    n_bins: int = 4,
    rtol: float = 1e-6,
) -> list[IncrementZ]:
    """z-scores of the mean increment of a stored process between consecutive ``times``.

    Increments are also grouped into ``n_bins`` quantile bins of ``B`` at the
    start of each interval, a coarse proxy for conditioning on the past.
    ``bin = -1`` is the unconditional row.  A mean increment smaller than
    ``rtol`` times the size of the process counts as zero, so that
    rounding-level drifts of deterministic processes do not register.
    """
    P = batch.process(name)
    ts = sorted({0.0, *[float(t) for t in times]})
    ks = [batch.index(t) for t in ts]
    resolution = max(rtol * float(np.max(np.abs(P))), np.finfo(float).tiny)
    out = []

    def score(d, t0, t1, b):
        n = d.size
        mean = float(np.mean(d))
        sd = float(np.std(d, ddof=1)) if n > 1 else 0.0
        se = max(sd / math.sqrt(n), resolution)
        z = 0.0 if abs(mean) <= resolution and sd == 0 else mean / se
        return IncrementZ(t0, t1, b, n, mean, sd, float(z))

    for k0, k1 in zip(ks, ks[1:]):
        t0, t1 = float(batch.times[k0]), float(batch.times[k1])
        d = P[:, k1] - P[:, k0]
        out.append(score(d, t0, t1, -1))
        cond = batch.B[:, k0]
        edges = np.unique(np.quantile(cond, np.linspace(0, 1, n_bins + 1)[1:-1]))
        if edges.size == 0 or np.all(cond == cond[0]):
            continue
        labels = np.searchsorted(edges, cond, side="right")
        for b in range(edges.size + 1):
            sel = labels == b
            if np.count_nonzero(sel) > 1:
                out.append(score(d[sel], t0, t1, b))
    return out


def refinement_slope(config: SdeConfig, dts, n_paths: int = 64) -> dict:
    """``max |M_hat - x|`` at each ``dt`` and the observed orders ``log2(res(dt) / res(dt/2))``."""
    dts = [float(d) for d in dts]
    res = []
    for d in dts:
        b = simulate_bessel(config.replace(dt=d, n_paths=n_paths, p=0.0))
        minimal_deflator(b)
        log_optimal_policy(b)
        res.append(pathwise_invariant_check(b))
    slopes = [math.log(r0 / r1) / math.log(d0 / d1) for r0, r1, d0, d1 in zip(res, res[1:], dts, dts[1:])]
    return {"dt": dts, "residual": res, "slope": slopes}


def batch_summary(batch: PathBatch) -> dict:
    """Deterministic summary statistics of a batch (for reproducibility checks)."""
    out = {"n_paths": batch.n_paths, "n_times": int(batch.times.size), "B_min": float(batch.B.min())}
    for name in _PROCESSES:
        arr = getattr(batch, name)
        if arr is not None:
            out[f"{name}_final_mean"] = float(np.mean(arr[:, -1]))
    return out
