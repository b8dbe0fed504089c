"""Utility functions, their convex conjugates and well-posedness diagnostics.

Three kinds are supported: logarithmic, CRRA power ``x**p / p`` (``p < 1``,
``p != 0``) and a custom utility tabulated as ``(x, U(x))`` pairs and
interpolated by a monotone piecewise cubic.  Every operation accepts scalars
or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import DomainError, UnboundedConjugateError

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

KINDS = ("log", "power", "tabulated")


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    p: float | None = None
    domain_floor: float = 1e-300
    x_table: np.ndarray | None = field(default=None, repr=False, compare=False)
    u_table: np.ndarray | None = field(default=None, repr=False, compare=False)
    _interp: PchipInterpolator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "power":
            if self.p is None or not (self.p < 1.0) or self.p == 0.0:
                raise DomainError(f"power utility needs p < 1, p != 0 (got {self.p})")
        if self.kind == "tabulated" and self._interp is None:
            raise ValueError("use UtilitySpec.tabulated() to build a tabulated utility")

    # -- constructors -----------------------------------------------------
    @classmethod
    def log(cls) -> UtilitySpec:
        return cls("log")

    @classmethod
    def power(cls, p: float) -> UtilitySpec:
        return cls("power", p=float(p))

    @classmethod
    def crra(cls, p: float) -> UtilitySpec:
        """CRRA family with the convention that ``p == 0`` means log utility."""
        return cls.log() if p == 0 else cls.power(p)

    @classmethod
    def tabulated(cls, x, u) -> UtilitySpec:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.ndim != 1 or x.shape != u.shape or x.size < 4:
            raise ValueError("table needs two equal-length columns with at least 4 rows")
        if np.any(x <= 0) or np.any(np.diff(x) <= 0):
            raise ValueError("tabulated x must be positive and strictly ascending")
        if np.any(np.diff(u) <= 0):
            raise ValueError("tabulated U must be strictly increasing")
        interp = PchipInterpolator(x, u, extrapolate=False)
        return cls("tabulated", domain_floor=float(x[0]), x_table=x, u_table=u, _interp=interp)

    @classmethod
    def from_table_file(cls, path) -> UtilitySpec:
        """Load a two-column ``x U(x)`` text table; lines starting with '#' are comments."""
        data = np.loadtxt(Path(path), comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns, found {data.shape[1]}")
        return cls.tabulated(data[:, 0], data[:, 1])

    # -- derived parameters ------------------------------------------------
    @property
    def q(self) -> float | None:
        """Conjugate exponent ``q = p / (p - 1)``, so that ``1 - q = 1 / (1 - p)``."""
        if self.kind == "power":
            return self.p / (self.p - 1.0)
        if self.kind == "log":
            return 0.0
        return None

    @property
    def x_range(self) -> tuple[float, float]:
        if self.kind == "tabulated":
            return float(self.x_table[0]), float(self.x_table[-1])
        return self.domain_floor, math.inf

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "power":
            d.update(p=self.p, q=self.q)
        if self.kind == "tabulated":
            d.update(x_min=self.x_range[0], x_max=self.x_range[1], rows=int(self.x_table.size))
        return d

    # -- raw (unchecked) evaluations, vectorised ---------------------------
    def _check_table(self, x):
        lo, hi = self.x_range
        if np.any(x < lo) or np.any(x > hi):
            raise DomainError(f"argument outside tabulated range [{lo:g}, {hi:g}]")

    def U(self, x):
        if self.kind == "log":
            return np.log(x)
        if self.kind == "power":
            return np.power(x, self.p) / self.p
        self._check_table(x)
        return self._interp(x)

    def dU(self, x):
        if self.kind == "log":
            return 1.0 / x
        if self.kind == "power":
            return np.power(x, self.p - 1.0)
        self._check_table(x)
        return self._interp(x, 1)

    def d2U(self, x):
        if self.kind == "log":
            return -1.0 / (x * x)
        if self.kind == "power":
            return (self.p - 1.0) * np.power(x, self.p - 2.0)
        self._check_table(x)
        return self._interp(x, 2)

    def I(self, y):
        """Inverse marginal utility, ``(U')^{-1}``."""
        if self.kind == "log":
            return 1.0 / y
        if self.kind == "power":
            return np.power(y, 1.0 / (self.p - 1.0))
        y_arr = np.asarray(y, dtype=float)
        out = np.array([self._tabulated_inverse(v) for v in y_arr.ravel()]).reshape(y_arr.shape)
        return out if out.ndim else float(out)

    def V(self, y):
        if self.kind == "log":
            return -np.log(y) - 1.0
        if self.kind == "power":
            q = self.q
            return -np.power(y, q) / q
        y_arr = np.asarray(y, dtype=float)
        out = np.array([numeric_conjugate(self, v) for v in y_arr.ravel()]).reshape(y_arr.shape)
        return out if out.ndim else float(out)

    def dV(self, y):
        """``V'(y) = -I(y)``."""
        if self.kind == "log":
            return -1.0 / y
        if self.kind == "power":
            return -np.power(y, self.q - 1.0)
        return -self.I(y)

    def d2V(self, y):
        """``V''(y) = -1 / U''(I(y))``."""
        if self.kind == "log":
            return 1.0 / (y * y)
        if self.kind == "power":
            return (self.q - 1.0) * -np.power(y, self.q - 2.0)
        return -1.0 / self.d2U(self.I(y))

    def _tabulated_inverse(self, y):
        lo, hi = self.x_range
        g_lo = float(self._interp(lo, 1)) - y
        g_hi = float(self._interp(hi, 1)) - y
        if g_lo < 0 or g_hi > 0:
            raise DomainError(
                f"marginal level {y:g} outside tabulated range "
                f"[{g_hi + y:g}, {g_lo + y:g}]"
            )
        t = brentq(
            lambda s: float(self._interp(math.exp(s), 1)) - y,
            math.log(lo),
            math.log(hi),
            xtol=1e-15,
            rtol=4 * np.finfo(float).eps,
        )
        return math.exp(t)


def _positive(name, v):
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr if arr.ndim else float(arr)


def evaluate_utility(spec: UtilitySpec, x):
    return spec.U(_positive("x", x))


def marginal_utility(spec: UtilitySpec, x):
    return spec.dU(_positive("x", x))


def inverse_marginal(spec: UtilitySpec, y):
    return spec.I(_positive("y", y))


def conjugate(spec: UtilitySpec, y):
    """Convex conjugate ``V(y) = sup_{x>0} [U(x) - x y]``.

    Closed forms are used for log and power utilities; tabulated utilities
    go through :func:`numeric_conjugate`.
    """
    return spec.V(_positive("y", y))


def fenchel_gap(spec: UtilitySpec, x, y):
    """``V(y) - U(x) + x y``: non-negative, zero exactly when ``y = U'(x)``."""
    x = _positive("x", x)
    y = _positive("y", y)
    return spec.V(y) - spec.U(x) + x * y


def numeric_conjugate(spec: UtilitySpec, y: float, rtol: float = 1e-13) -> float:
    """Golden-section evaluation of ``sup_x [U(x) - x y]`` on a log-x scale.

    The bracket starts at ``x = 1`` (clipped into the domain) and is doubled
    outward until the first-order condition ``U'(x) - y`` changes sign.
    """
    y = float(_positive("y", y))
    lo_dom, hi_dom = spec.x_range
    foc = lambda x: float(spec.dU(x)) - y  # noqa: E731

    x0 = min(max(1.0, lo_dom), hi_dom)
    lo = hi = x0
    if foc(x0) > 0:
        while foc(hi) > 0:
            if hi >= hi_dom:
                raise UnboundedConjugateError(
                    f"U'(x) > {y:g} on the whole domain: conjugate is not attained"
                )
            lo = hi
            hi = min(hi * 2.0, hi_dom)
            if not math.isfinite(hi) or hi > 1e300:
                raise UnboundedConjugateError(f"conjugate at {y:g} diverges")
    else:
        while foc(lo) < 0:
            if lo <= lo_dom:
                raise DomainError(
                    f"maximiser for y={y:g} lies below the smallest admitted argument"
                )
            hi = lo
            lo = max(lo / 2.0, lo_dom)

    a, b = math.log(lo), math.log(hi)
    f = lambda t: float(spec.U(math.exp(t))) - math.exp(t) * y  # noqa: E731
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(400):
        if b - a <= rtol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return max(f(a), f(b), fc, fd)


@dataclass(frozen=True)
class ElasticityEstimate:
    value: float
    satisfied: bool
    tail: tuple[float, ...]
    note: str = ""


def asymptotic_elasticity(spec: UtilitySpec, x_grid, tail_points: int = 3) -> ElasticityEstimate:
    """Estimate ``limsup_{x->inf} x U'(x) / U(x)`` from the top of ``x_grid``.

    The estimate is the ratio at the largest grid point; the ratios at the
    last ``tail_points`` points are returned for inspection.  When ``U <= 0``
    on the whole tail the ratio carries no information about the growth
    condition and 0 is returned with a note.
    """
    x = np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or x.size < 3:
        raise ValueError("x_grid needs at least 3 points")
    if np.any(np.diff(x) <= 0) or x[0] <= 0:
        raise ValueError("x_grid must be positive and ascending")
    if x[-1] < 1e3:
        raise ValueError("x_grid must reach at least 1e3")
    tail = x[-tail_points:]
    u = np.asarray(spec.U(tail), dtype=float)
    if np.all(u <= 0):
        return ElasticityEstimate(0.0, True, (), note="U <= 0 on the grid tail")
    ratios = np.where(u > 0, tail * np.asarray(spec.dU(tail)) / np.where(u > 0, u, 1.0), np.nan)
    value = float(ratios[-1]) if u[-1] > 0 else float(np.nanmax(ratios))
    return ElasticityEstimate(value, value < 1.0, tuple(float(r) for r in ratios))


@dataclass(frozen=True)
class InadaReport:
    eps: float
    big: float
    marginal_at_eps: float
    marginal_at_big: float
    low_end_ok: bool
    high_end_ok: bool

    @property
    def passed(self) -> bool:
        return self.low_end_ok and self.high_end_ok


def check_inada(
    spec: UtilitySpec,
    eps: float = 1e-4,
    big: float = 1e6,
    low_threshold: float = 10.0,
    high_threshold: float = 1e-2,
) -> InadaReport:
    """Empirical Inada check: ``U'(eps) > low_threshold`` and ``U'(big) < high_threshold``."""
    if not (0 < eps < 1 < big):
        raise DomainError("need 0 < eps < 1 < big")
    m_eps = float(marginal_utility(spec, eps))
    m_big = float(marginal_utility(spec, big))
    return InadaReport(eps, big, m_eps, m_big, m_eps > low_threshold, m_big < high_threshold)
