"""Primal and dual consumption problems on an event tree.

The dual is minimised over transition-built deflators, i.e. over one
martingale transition measure per node, with a scaled projected-gradient
method.  The primal is solved independently, by backward induction for log
and power utilities and by damped Newton iterations on the joint ``(c, H)``
vector otherwise; it serves as the oracle for the dual route.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq

from .errors import CalibrationError, DualInfiniteError, OracleError, StageError
from .tree import (
    Q_MIN,
    EventTree,
    default_transitions,
    deflator_from_transitions,
    is_admissible,
    random_transitions,
    wealth_process,
)
from .utility import UtilitySpec

_EPS = np.finfo(float).eps
_MEMORY = 10


# --------------------------------------------------------------------------
# dual problem
# --------------------------------------------------------------------------
@dataclass
class DualSolution:
    y: float
    q: np.ndarray
    Z: np.ndarray
    value: float
    iterations: int
    stationarity: float


class _Projector:
    """Blockwise projection onto the product of the free node polytopes.

    Segments (one free direction) are projected in one vectorised step;
    higher-dimensional polytopes fall back to their own exact projection.
    """

    def __init__(self, tree: EventTree, floor: float):
        self.tree = tree
        self.free = []
        segs = {}
        self.general = []
        for node in tree.nonterminal:
            poly = tree.polytope(node, floor)
            if poly.is_singleton:
                continue
            self.free.append(node)
            kids = tree.children[node]
            if poly.dim == 1:
                segs.setdefault(kids.size, []).append((kids, poly))
            else:
                self.general.append((kids, poly))
        self.segments = []
        for polys in segs.values():
            idx = np.array([k for k, _ in polys])
            pts = np.array([p.point for _, p in polys])
            dirs = np.array([p.null_basis[:, 0] for _, p in polys])
            with np.errstate(divide="ignore", invalid="ignore"):
                bound = (floor - pts) / dirs
            lo = np.where(dirs > 1e-15, bound, -np.inf).max(axis=1)
            hi = np.where(dirs < -1e-15, bound, np.inf).min(axis=1)
            self.segments.append((idx, pts, dirs, lo, hi))
        self.floor = floor
        self.free = np.array(self.free, dtype=int)
        # free coordinates, node-indexed mask, and per-coordinate metric weight
        mask = np.zeros(tree.n_nodes, dtype=bool)
        for node in self.free:
            mask[tree.children[node]] = True
        self.mask = mask
        self.weight = np.where(mask, tree.path_prob[np.maximum(tree.parent, 0)], 1.0)

    def project(self, q):
        out = q.copy()
        for idx, pts, dirs, lo, hi in self.segments:
            theta = np.einsum("ij,ij->i", dirs, q[idx] - pts)
            theta = np.clip(theta, lo, hi)
            out[idx] = np.maximum(pts + theta[:, None] * dirs, self.floor)
        for kids, poly in self.general:
            out[kids] = poly.project(q[kids])
        return out


def _deflator(tree: EventTree, q) -> np.ndarray:
    Z = np.empty(tree.n_nodes)
    Z[0] = 1.0
    for lvl in tree.levels[1:]:
        Z[lvl] = Z[tree.parent[lvl]] * q[lvl] / tree.prob[lvl]
    return Z


def dual_objective(tree: EventTree, spec: UtilitySpec, y: float, Z) -> float:
    """``sum_t kappa_t E[V(gamma_t y Z_t)]`` for a unit-root deflator ``Z``."""
    w = tree.path_prob * tree.kappa
    return float(np.dot(w, spec.V(tree.gamma * y * Z)))


def _dual_value_grad(tree, spec, y, q, w, gam):
    Z = _deflator(tree, q)
    arg = gam * y * Z
    val = float(np.dot(w, spec.V(arg)))
    D = w * arg * spec.dV(arg)
    S = tree.subtree_sum(D)
    grad = np.zeros(tree.n_nodes)
    grad[1:] = S[1:] / q[1:]
    return val, grad, Z


NEWTON_NODE_LIMIT = 1500


def _deflator_null_space(tree: EventTree) -> np.ndarray:
    """Orthonormal basis of directions that keep every deflator condition.

    The conditions are linear in the node values of ``Z``: unit root and,
    per node, preserved ``E[Z]`` and ``E[Z S]``.  The basis is cached on the
    tree.
    """
    if "deflator_null" in tree._cache:
        return tree._cache["deflator_null"]
    d = tree.n_assets
    nt = tree.nonterminal
    A = np.zeros((1 + nt.size * (1 + d), tree.n_nodes))
    A[0, 0] = 1.0
    row = 1
    for node in nt:
        kids = tree.children[node]
        pk = tree.prob[kids]
        A[row, kids] = pk
        A[row, node] = -1.0
        A[row + 1 : row + 1 + d, kids] = (pk[:, None] * tree.prices[kids]).T
        A[row + 1 : row + 1 + d, node] = -tree.prices[node]
        row += 1 + d
    N = null_space(A)
    tree._cache["deflator_null"] = N
    return N


def _interior_transitions(tree: EventTree, floor: float) -> np.ndarray:
    """Transition measure with each node at the mean of its polytope's vertices.

    Unlike the stored reference points, which may sit on the floor, this
    start keeps ``Z`` well away from zero.
    """
    q = np.ones(tree.n_nodes)
    for node in tree.nonterminal:
        poly = tree.polytope(node, floor)
        q[tree.children[node]] = poly.point if poly.is_singleton else poly.vertices().mean(axis=0)
    return q


def _newton_deflator(tree, spec, y, Z, w, gam, max_iter: int = 200):
    """Newton iteration on ``Z`` restricted to the deflator conditions.

    The dual objective is convex in the node values of ``Z`` and the
    conditions are linear, so steps are taken in the null space of the
    constraints (exactly feasible), with backtracking to keep ``Z``
    positive.  Stopping tests are relative to the current size of the
    objective's terms.  Returns ``(Z, iterations)`` or ``None`` on breakdown.
    """
    N = _deflator_null_space(tree)
    c = gam * y

    def value(Z):
        return float(np.dot(w, spec.V(c * Z)))

    Z = np.asarray(Z, dtype=float).copy()
    f = value(Z)
    for it in range(1, max_iter + 1):
        arg = c * Z
        mag = float(np.dot(w, np.abs(spec.V(arg))))
        g = w * c * spec.dV(arg) / mag
        h = w * c * c * spec.d2V(arg) / mag
        if not (math.isfinite(mag) and mag > 0 and np.all(np.isfinite(h)) and np.all(h > 0)):
            return None
        gr = N.T @ g
        Hr = (N.T * h) @ N
        # symmetric diagonal scaling before the solve
        s_ = 1.0 / np.sqrt(np.diag(Hr))
        du = -s_ * np.linalg.lstsq(Hr * s_[:, None] * s_[None, :], s_ * gr, rcond=1e-15)[0]
        dz = N @ du
        dec = -float(gr @ du)  # relative to mag
        if dec <= 64 * _EPS:
            return Z, it - 1
        t = 1.0
        neg = dz < 0
        if neg.any():
            t = min(1.0, 0.99 * float(np.min(-Z[neg] / dz[neg])))
        noise = 16 * _EPS * mag
        while True:
            Zt = Z + t * dz
            ft = value(Zt)
            if math.isfinite(ft) and ft <= f - 0.25 * t * dec * mag + noise:
                break
            t *= 0.5
            if t < 1e-14:
                return (Z, it - 1) if dec <= 1e-10 else None
        stalled = ft >= f and dec <= 1e-10
        Z, f = Zt, ft
        if stalled:
            return Z, it
    return None


def solve_dual(
    tree: EventTree,
    spec: UtilitySpec,
    y: float,
    q0=None,
    tol: float = 1e-9,
    max_iter: int = 50_000,
    floor: float = Q_MIN,
    rng: np.random.Generator | None = None,
    method: str = "auto",
) -> DualSolution:
    """Minimise ``sum_t kappa_t E[V(gamma_t y Z_t)]`` over transition-built deflators.

    Parameters
    ----------
    q0
        Node-indexed starting transition measure (defaults to the stored
        polytope points); ``rng`` instead draws a random feasible start.
    tol
        Stop once the sup-norm of the scaled projected-gradient step is
        below ``tol``.
    method
        ``"spg"`` runs the projected-gradient iteration only.  ``"auto"``
        first tries Newton steps on the node values of ``Z`` under the linear
        martingale constraints (log and power utilities on trees up to
        ``NEWTON_NODE_LIMIT`` nodes) and falls back to projected gradient,
        warm-started, when that does not meet ``tol``.

    Returns the minimiser with root value normalised to 1; the dual
    deflator for ``y`` is ``y * Z``.
    """
    if y <= 0:
        raise ValueError("y must be positive")
    proj = _Projector(tree, floor)
    if q0 is not None:
        q = proj.project(np.asarray(q0, dtype=float))
    elif rng is not None:
        q = random_transitions(tree, rng, floor)
    else:
        q = default_transitions(tree, floor)

    w = tree.path_prob * tree.kappa
    gam = tree.gamma
    val, grad, Z = _dual_value_grad(tree, spec, y, q, w, gam)
    if not math.isfinite(val):
        raise DualInfiniteError(f"dual objective is not finite at y={y:g}")
    if proj.free.size == 0:
        return DualSolution(y, q, Z, val, 0, 0.0)

    m = proj.mask
    metric = proj.weight

    def term_scale(Z):
        # Typical size of the terms: dividing by it makes the stationarity
        # test independent of the scale of V (power conjugates are
        # homogeneous in y and can be astronomically large).
        arg = gam * y * Z
        sc = float(np.dot(w, np.abs(arg * spec.dV(arg)))) / float(np.sum(w))
        return sc if math.isfinite(sc) and sc > 0 else 1.0

    def stationarity(q, grad):
        trial = proj.project(q - np.where(m, grad / metric, 0.0))
        return float(np.max(np.abs(trial - q)[m]))

    if method not in ("auto", "spg"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto" and spec.kind in ("log", "power") and tree.n_nodes <= NEWTON_NODE_LIMIT:
        start = Z if q0 is not None or rng is not None else _deflator(tree, _interior_transitions(tree, floor))
        found = _newton_deflator(tree, spec, y, start, w, gam)
        if found is not None:
            Zn, iters = found
            qn = np.ones(tree.n_nodes)
            qn[1:] = tree.prob[1:] * Zn[1:] / Zn[tree.parent[1:]]
            if np.all(qn[m] >= floor):
                vn, gn, Zn = _dual_value_grad(tree, spec, y, qn, w, gam)
                stat = stationarity(qn, gn / term_scale(Zn))
                if stat <= tol:
                    return DualSolution(y, qn, Zn, dual_objective(tree, spec, y, Zn), iters, stat)
            qp = proj.project(qn)
            vp, gp, Zp = _dual_value_grad(tree, spec, y, qp, w, gam)
            if math.isfinite(vp) and vp < val:
                q, val, grad, Z = qp, vp, gp, Zp

    scale = term_scale(Z)
    noise = 8 * _EPS * float(np.dot(w, np.abs(spec.V(gam * y * Z)))) / scale

    step = 1.0
    it = 0
    stat = math.inf
    val /= scale
    grad = grad / scale
    recent = [val]
    for it in range(1, max_iter + 1):
        g_scaled = np.where(m, grad / metric, 0.0)
        stat = stationarity(q, grad)
        if stat <= tol:
            it -= 1
            break
        cand = proj.project(q - step * g_scaled)
        d = cand - q
        slope = float(np.dot(grad[m], d[m]))
        # non-monotone Armijo test against the worst of the last few values
        ref = max(recent)
        lam = 1.0
        while True:
            q_new = q + lam * d
            val_new, grad_new, Z_new = _dual_value_grad(tree, spec, y, q_new, w, gam)
            val_new /= scale
            grad_new = grad_new / scale
            if math.isfinite(val_new) and val_new <= ref + 1e-4 * lam * slope + max(8 * _EPS * abs(ref), noise):
                break
            lam *= 0.5
            if lam < 1e-20:
                raise DualInfiniteError("line search failed: objective not decreasing")
        s = q_new - q
        dg = grad_new - grad
        denom = float(np.dot(s[m], dg[m]))
        num = float(np.dot(s[m] * metric[m], s[m]))
        step = num / denom if denom > 0 else 1e6
        step = min(max(step, 1e-12), 1e12)
        q, val, grad, Z = q_new, val_new, grad_new, Z_new
        recent.append(val)
        if len(recent) > _MEMORY:
            recent.pop(0)
    else:
        raise DualInfiniteError(f"dual solver did not reach tol={tol:g} in {max_iter} iterations")
    return DualSolution(y, q, Z, dual_objective(tree, spec, y, Z), it, stat)


def dual_value(tree, spec, y, **kw) -> float:
    return solve_dual(tree, spec, y, **kw).value


def candidate_consumption(tree: EventTree, spec: UtilitySpec, y: float, Z) -> np.ndarray:
    """``c = I(gamma_t y Z)``, the consumption paired with a dual deflator."""
    return np.asarray(spec.I(tree.gamma * y * np.asarray(Z, dtype=float)), dtype=float)


def consumption_budget(tree: EventTree, c, Z) -> float:
    return tree.expectation(np.asarray(c) * np.asarray(Z)) * tree.dt


# --------------------------------------------------------------------------
# calibration of the multiplier
# --------------------------------------------------------------------------
@dataclass
class Calibration:
    x: float
    y: float
    dual: DualSolution
    evaluations: int


def calibrate(
    tree: EventTree,
    spec: UtilitySpec,
    x: float,
    bracket=(1e-8, 1e8),
    q0=None,
    tol: float = 1e-9,
    floor: float = Q_MIN,
) -> Calibration:
    """Find ``y`` with ``E[sum_t c_t(y) Z_t(y) dt] = x``.

    The budget map is strictly decreasing in ``y``; a sign change is
    bracketed by expanding outward from an initial guess, then Brent's
    method (bisection safeguarded secant / inverse quadratic steps) is run
    on ``log y``.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    cache: dict[float, DualSolution] = {}
    state = {"q": q0}

    def excess(logy):
        yv = math.exp(logy)
        sol = solve_dual(tree, spec, yv, q0=state["q"], tol=tol, floor=floor)
        state["q"] = sol.q
        cache[logy] = sol
        b = consumption_budget(tree, candidate_consumption(tree, spec, yv, sol.Z), sol.Z)
        return math.log(b) - math.log(x)

    lo_lim, hi_lim = math.log(bracket[0]), math.log(bracket[1])
    guess = float(spec.dU(min(max(x / tree.clock_mass, spec.x_range[0]), spec.x_range[1])))
    a = min(max(math.log(guess), lo_lim), hi_lim)
    fa = excess(a)
    b, fb = a, fa
    width = 0.5
    while fa * fb > 0:
        if fa > 0:  # budget too large: raise y
            b = min(a + width, hi_lim)
        else:
            b = max(a - width, lo_lim)
        fb = excess(b)
        if fa * fb > 0:
            if b in (lo_lim, hi_lim):
                raise CalibrationError(f"no budget root for x={x:g} within y in {bracket}")
            a, fa = b, fb
            width *= 2.0
    if fb == 0:
        root = b
    elif fa == 0:
        root = a
    else:
        root = brentq(excess, min(a, b), max(a, b), xtol=1e-15, rtol=4 * _EPS, maxiter=200)
    if root not in cache:
        excess(root)
    return Calibration(x, math.exp(root), cache[root], len(cache))


def calibrate_y(tree: EventTree, spec: UtilitySpec, x: float, **kw) -> float:
    return calibrate(tree, spec, x, **kw).y


# --------------------------------------------------------------------------
# direct primal oracle
# --------------------------------------------------------------------------
@dataclass
class PrimalSolution:
    x: float
    c: np.ndarray
    H: np.ndarray
    value: float
    iterations: int
    wealth: np.ndarray


def plan_value(tree: EventTree, spec: UtilitySpec, c) -> float:
    """``sum_t kappa_t E[U(c_t)]``; ``-inf`` when ``U(0+) = -inf`` and ``c`` vanishes somewhere."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("consumption must be non-negative")
    w = tree.path_prob * tree.kappa
    pos = c > 0
    if not np.all(pos):
        if spec.kind == "log" or (spec.kind == "power" and spec.p < 0):
            return -math.inf
        if spec.kind == "tabulated":
            raise ValueError("tabulated utility is undefined at zero consumption")
    u = np.zeros_like(c)
    u[pos] = spec.U(c[pos])
    return float(np.dot(w, u))


def _leaf_design(tree: EventTree):
    nt = tree.nonterminal
    d = tree.n_assets
    col = {int(n): i for i, n in enumerate(nt)}
    m = nt.size
    leaves = tree.terminal
    A = np.zeros((leaves.size, m + m * d))
    for r, leaf in enumerate(leaves):
        node = int(leaf)
        while tree.parent[node] >= 0:
            par = int(tree.parent[node])
            j = col[par]
            A[r, j] -= tree.dt
            A[r, m + j * d : m + (j + 1) * d] += tree.prices[node] - tree.prices[par]
            node = par
    return nt, leaves, A


def _best_fraction(dS: np.ndarray, weights: np.ndarray, p: float, node: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Maximise ``sum_i w_i f(r_i)`` with ``r_i = 1 + g . dS_i`` and ``f = log`` (``p == 0``) or ``t^p / p``.

    Returns the maximiser ``g``, the gross returns ``r`` and the maximum.  The
    objective is strictly concave where every return is positive, and
    no-arbitrage makes the maximum finite.
    """
    k, d = dS.shape

    def util(r):
        return np.log(r) if p == 0 else r**p / p

    if d == 1:
        return _best_fraction_1d(dS[:, 0], weights, p, node, util)

    def f(g):
        r = 1.0 + dS @ g
        if np.any(r <= 0):
            return -math.inf
        return float(weights @ util(r))

    g = np.zeros(d)
    val = f(g)
    for _ in range(200):
        r = 1.0 + dS @ g
        grad = dS.T @ (weights * r ** (p - 1.0))
        hess = (dS.T * (weights * (p - 1.0) * r ** (p - 2.0))) @ dS
        step = -np.linalg.lstsq(hess, grad, rcond=1e-14)[0]
        dec = -float(grad @ step)
        if dec <= 1e-28 * max(1.0, abs(val)):
            break
        lam = 1.0
        while lam > 1e-16:
            new = f(g + lam * step)
            if new >= val + 0.25 * lam * dec - 8 * _EPS * abs(val):
                break
            lam *= 0.5
        else:
            break
        g, val = g + lam * step, new
    return g, 1.0 + dS @ g, val


def _best_fraction_1d(a, weights, p, node, util):
    up, dn = a > 0, a < 0
    if not (up.any() and dn.any()):
        raise OracleError(f"node {node}: price moves admit arbitrage")
    lo, hi = -1.0 / float(np.max(a)), -1.0 / float(np.min(a))
    mid = 0.5 * (lo + hi)
    s_mid = float(weights @ (a * (1.0 + a * mid) ** (p - 1.0)))
    if s_mid == 0.0:
        r = 1.0 + a * mid
        return np.array([mid]), r, float(weights @ util(r))
    # The root can sit extremely close to the end of (lo, hi) where one
    # branch's return vanishes (for p near 1), beyond what g resolves.  Solve
    # instead in log t, t being that branch's return, on the half that holds
    # the root; the other returns are r_i = (1 - a_i / ref) + (a_i / ref) t.
    ref = float(np.max(a)) if s_mid < 0 else float(np.min(a))
    sign = 1.0 if ref > 0 else -1.0
    ratio = a / ref
    pinned = a == ref

    def returns(log_t):
        t = math.exp(log_t)
        r = (1.0 - ratio) + ratio * t
        r[pinned] = t
        return r

    def slope(log_t):
        # decreasing in log t, +inf as t -> 0, negative at the midpoint
        return sign * float(weights @ (a * returns(log_t) ** (p - 1.0)))

    top = math.log(1.0 + ref * mid)
    low, step = top - 1.0, 1.0
    while slope(low) <= 0:
        step *= 2.0
        low = top - step
        if low < -745:
            raise OracleError(f"node {node}: optimal position sits at the solvency boundary")
    log_t = brentq(slope, low, top, xtol=1e-14, rtol=4 * _EPS, maxiter=500)
    r = returns(log_t)
    g = (math.exp(log_t) - 1.0) / ref
    return np.array([g]), r, float(weights @ util(r))


def _primal_backward(tree: EventTree, spec: UtilitySpec, x: float) -> PrimalSolution:
    """Backward induction for log and power utilities.

    The value at a node with wealth ``X`` is ``K X^p / p`` (power) or
    ``K log X + C`` (log), so each node reduces to a portfolio problem in the
    fraction ``g`` of wealth held in the assets and a closed-form consumption
    fraction.  Wealth is rebuilt forward multiplicatively, which stays
    accurate even when optimal consumption spans many orders of magnitude.
    """
    p = 0.0 if spec.kind == "log" else float(spec.p)
    dt, kap = tree.dt, tree.kappa
    n, d = tree.n_nodes, tree.n_assets
    K = np.zeros(n)
    C = np.zeros(n)
    cons_frac = np.ones(n)
    port = np.zeros((n, d))
    growth = np.ones(n)
    for leaf in tree.terminal:
        K[leaf] = kap[leaf] * dt ** (-p)
        C[leaf] = -kap[leaf] * math.log(dt) if p == 0 else 0.0
    for lvl in reversed(tree.levels[:-1]):
        for node in lvl:
            kids = tree.children[node]
            dS = tree.prices[kids] - tree.prices[node]
            wK = tree.prob[kids] * K[kids]
            g, r, best = _best_fraction(dS, wK, p, int(node))
            port[node] = g
            growth[kids] = r
            if p == 0:
                total = float(wK.sum())
                a = kap[node] / (kap[node] + total)
                K[node] = kap[node] + total
                C[node] = (
                    kap[node] * math.log(a / dt)
                    + total * math.log1p(-a)
                    + best
                    + float(tree.prob[kids] @ C[kids])
                )
            else:
                L = p * best
                ratio = (L * dt**p / kap[node]) ** (1.0 / (p - 1.0))
                a = ratio / (1.0 + ratio)
                K[node] = kap[node] * (a / dt) ** p + L * (1.0 - a) ** p
            cons_frac[node] = a
    X = np.zeros(n)
    c = np.zeros(n)
    H = np.zeros((n, d))
    X[0] = x
    for lvl in tree.levels:
        c[lvl] = cons_frac[lvl] * X[lvl] / dt
        for node in lvl:
            rest = (1.0 - cons_frac[node]) * X[node]
            H[node] = port[node] * rest
            kids = tree.children[node]
            if kids.size:
                X[kids] = rest * growth[kids]
    value = K[0] * math.log(x) + C[0] if p == 0 else K[0] * x**p / p
    return PrimalSolution(x, c, H, float(value), 0, X)


def solve_primal_direct(
    tree: EventTree,
    spec: UtilitySpec,
    x: float,
    max_periods: int = 4,
    max_branching: int = 3,
    max_iter: int = 200,
    method: str = "auto",
) -> PrimalSolution:
    """Maximise ``sum_t kappa_t E[U(c_t)]`` over ``(H, c)`` without deflators.

    ``method="backward"`` (the default for log and power utilities) uses
    backward induction on the homogeneous value function.  ``"newton"``
    takes damped Newton steps on the joint ``(c, H)`` vector of a small tree:
    terminal consumption saturates the terminal wealth, so the problem is
    unconstrained on ``{c > 0, X_T > 0}``, and intermediate wealth is then
    automatically positive because every node admits a martingale measure.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    if method == "auto":
        method = "backward" if spec.kind in ("log", "power") else "newton"
    if method == "backward":
        if spec.kind not in ("log", "power"):
            raise OracleError("backward induction needs a log or power utility")
        sol = _primal_backward(tree, spec, x)
        adm = is_admissible(tree, x, sol.H, sol.c, tol=1e-9 * max(1.0, x))
        if not adm.ok:
            raise OracleError(f"primal optimiser violates admissibility at node {adm.first_violation}")
        return sol
    if method != "newton":
        raise ValueError(f"unknown method {method!r}")
    if tree.horizon > max_periods or tree.max_branching > max_branching:
        raise OracleError(
            f"direct solver limited to {max_periods} periods and {max_branching} branches"
        )
    if x <= 0:
        raise ValueError("x must be positive")
    nt, leaves, A = _leaf_design(tree)
    m = nt.size
    dt = tree.dt
    w = tree.path_prob * tree.kappa
    w_c, w_l = w[nt], w[leaves]

    v = np.zeros(A.shape[1])
    v[:m] = x / ((tree.horizon + 1) * dt)

    def parts(v):
        c = v[:m]
        XL = x + A @ v
        return c, XL

    def f(v):
        c, XL = parts(v)
        if np.any(c <= 0) or np.any(XL <= 0):
            return -math.inf
        return float(np.dot(w_c, spec.U(c)) + np.dot(w_l, spec.U(XL / dt)))

    def magnitude(v):
        # rounding in f is relative to the summed absolute terms, not to |f|
        c, XL = parts(v)
        return max(1.0, float(np.dot(w_c, np.abs(spec.U(c))) + np.dot(w_l, np.abs(spec.U(XL / dt)))))

    fv = f(v)
    it = 0
    for it in range(1, max_iter + 1):
        c, XL = parts(v)
        g = A.T @ (w_l * spec.dU(XL / dt) / dt)
        g[:m] += w_c * spec.dU(c)
        Hn = -(A.T * (w_l * spec.d2U(XL / dt) / dt**2)) @ A
        Hn[np.arange(m), np.arange(m)] -= w_c * spec.d2U(c)
        # symmetric diagonal scaling: optimal consumption can span many
        # orders of magnitude, which would otherwise swamp the solve
        D = 1.0 / np.sqrt(np.maximum(np.diag(Hn), np.finfo(float).tiny))
        delta = D * np.linalg.lstsq(Hn * D[:, None] * D[None, :], D * g, rcond=1e-14)[0]
        decrement = float(g @ delta)
        mag = magnitude(v)
        # the decrement approximates twice the remaining objective gap
        if decrement <= 1e-15 * mag or float(np.max(np.abs(g))) <= 1e-15:
            it -= 1
            break
        lam = 1.0
        while True:
            v_new = v + lam * delta
            f_new = f(v_new)
            if f_new >= fv + 0.25 * lam * decrement - 8 * _EPS * mag:
                break
            lam *= 0.5
            if lam < 1e-16:
                break
        if lam < 1e-16:
            if decrement <= 1e-18 * mag:
                break
            raise OracleError("Newton line search stalled")
        stalled = f_new <= fv and decrement <= 1e-10 * mag
        v, fv = v_new, f_new
        if stalled:
            break
    else:
        raise OracleError(f"direct primal solver did not converge in {max_iter} iterations")

    c, XL = parts(v)
    c_full = np.empty(tree.n_nodes)
    c_full[nt] = c
    c_full[leaves] = XL / dt
    H_full = np.zeros((tree.n_nodes, tree.n_assets))
    H_full[nt] = v[m:].reshape(m, tree.n_assets)
    adm = is_admissible(tree, x, H_full, c_full, tol=1e-9 * max(1.0, x))
    if not adm.ok:
        raise OracleError(f"primal optimiser violates admissibility at node {adm.first_violation}")
    return PrimalSolution(x, c_full, H_full, fv, it, wealth_process(tree, x, H_full, c_full))


# --------------------------------------------------------------------------
# optimal wealth
# --------------------------------------------------------------------------
def optimal_wealth_from_dual(tree: EventTree, c, Z) -> np.ndarray:
    """Pre-consumption wealth ``X`` with ``X Z = E[sum_{s >= t} c_s Z_s dt | node]``.

    After the consumption at a node, ``(X - c dt) Z`` is the deflated wealth
    carried forward; it vanishes at the horizon.
    """
    c = np.asarray(c, dtype=float)
    Z = np.asarray(Z, dtype=float)
    F = c * Z * tree.dt
    for lvl in reversed(tree.levels[1:]):
        np.add.at(F, tree.parent[lvl], tree.prob[lvl] * F[lvl])
    return F / Z


def optimal_gains(tree: EventTree, X, c, Z) -> np.ndarray:
    """``M = X Z + sum_{s < t} c Z dt`` (pre-consumption convention)."""
    return np.asarray(X) * np.asarray(Z) + tree.strict_ancestor_sum(np.asarray(c) * np.asarray(Z) * tree.dt)


def hedge_from_wealth(tree: EventTree, X, c):
    """Least-squares strategy replicating ``X`` one step at a time, and its worst residual."""
    X = np.asarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    H = np.zeros((tree.n_nodes, tree.n_assets))
    worst = 0.0
    for node in tree.nonterminal:
        kids = tree.children[node]
        dS = tree.prices[kids] - tree.prices[node]
        target = X[kids] - (X[node] - c[node] * tree.dt)
        h = np.linalg.lstsq(dS, target, rcond=None)[0]
        H[node] = h
        worst = max(worst, float(np.max(np.abs(dS @ h - target))))
    return H, worst


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------
@dataclass
class DualityReport:
    x: float
    y_star: float
    u_of_x: float
    v_of_y: float
    u_direct: float | None
    conjugacy_gap: float
    pdc_max_residual: float
    budget_residual: float
    budget_residual_unit: float
    martingale_max_residual: float
    terminal_deflated_wealth_max: float
    potential: list
    potential_decreasing: bool
    derivative_identity_residuals: dict
    hedge_residual: float
    hedge_admissible: bool
    dual_iterations: int
    dual_stationarity: float
    truncation_bound: float
    utility: dict
    tree: dict
    Z: np.ndarray = field(repr=False, default=None)
    c: np.ndarray = field(repr=False, default=None)
    X: np.ndarray = field(repr=False, default=None)
    M: np.ndarray = field(repr=False, default=None)
    H: np.ndarray = field(repr=False, default=None)

    SCALARS = (
        "x",
        "y_star",
        "u_of_x",
        "v_of_y",
        "u_direct",
        "conjugacy_gap",
        "pdc_max_residual",
        "budget_residual",
        "budget_residual_unit",
        "martingale_max_residual",
        "terminal_deflated_wealth_max",
        "potential_decreasing",
        "hedge_residual",
        "hedge_admissible",
        "dual_iterations",
        "dual_stationarity",
        "truncation_bound",
    )

    def to_dict(self, arrays: bool = False) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("Z", "c", "X", "M", "H")}
        if arrays:
            for k in ("Z", "c", "X", "M"):
                d[k] = [float(v) for v in getattr(self, k)]
        return d

    def flat_row(self) -> dict:
        row = {k: getattr(self, k) for k in self.SCALARS}
        for k, v in self.derivative_identity_residuals.items():
            row[f"deriv_{k}"] = v
        return row


def _dual_route_u(tree, spec, x, q0):
    cal = calibrate(tree, spec, x, q0=q0)
    return cal.dual.value + x * cal.y, cal


def duality_report(
    tree: EventTree,
    spec: UtilitySpec,
    x: float,
    oracle: bool | None = None,
    fd_step: float = 1e-4,
) -> DualityReport:
    """Solve both problems at ``x`` and collect every duality residual.

    ``oracle`` selects whether the direct primal solver is run (default: only
    on trees small enough for it).
    """

    def stage(name, fn, *a, **kw):
        try:
            return fn(*a, **kw)
        except Exception as exc:  # noqa: BLE001 - relabel and re-raise
            raise StageError(name, exc) from exc

    cal = stage("calibrate_y", calibrate, tree, spec, x)
    y, sol = cal.y, cal.dual
    Z = sol.Z
    c = stage("candidate_consumption", candidate_consumption, tree, spec, y, Z)
    X = stage("optimal_wealth", optimal_wealth_from_dual, tree, c, Z)
    M = optimal_gains(tree, X, c, Z)
    H, hedge_res = hedge_from_wealth(tree, X, c)
    adm = is_admissible(tree, x, H, c, tol=1e-9 * max(1.0, x))

    w = tree.path_prob * tree.kappa
    u_val = float(np.dot(w, spec.U(c)))
    v_val = sol.value

    if oracle is None:
        oracle = tree.horizon <= 4 and tree.max_branching <= 3
    u_direct = stage("solve_primal_direct", solve_primal_direct, tree, spec, x).value if oracle else None
    u_ref = u_direct if u_direct is not None else u_val

    ys = y * np.exp(np.linspace(-0.5, 0.5, 11))
    vs = [stage("solve_dual", solve_dual, tree, spec, yy, q0=sol.q).value + x * yy for yy in ys]
    conj_gap = u_ref - min(vs)

    pdc = float(np.max(np.abs(spec.dU(c) - tree.gamma * y * Z) / (tree.gamma * y * Z)))
    budget_unit = abs(consumption_budget(tree, c, Z) - x)
    budget = abs(consumption_budget(tree, c, y * Z) - x * y)

    nt = tree.nonterminal
    mart = float(np.max(np.abs(tree.conditional_expectation(M)[nt] - M[nt]))) if nt.size else 0.0
    post = (X - c * tree.dt) * Z
    term = float(np.max(np.abs(post[tree.terminal])))
    potential = [float(np.dot(tree.path_prob[lvl], post[lvl])) for lvl in tree.levels]
    decreasing = bool(all(a > b for a, b in zip(potential, potential[1:])))

    # derivative identities by central differences of the value functions
    h = fd_step * x
    u_plus, _ = _dual_route_u(tree, spec, x + h, sol.q)
    u_minus, _ = _dual_route_u(tree, spec, x - h, sol.q)
    u_prime = (u_plus - u_minus) / (2 * h)
    hy = fd_step * y
    v_prime = (
        solve_dual(tree, spec, y + hy, q0=sol.q).value - solve_dual(tree, spec, y - hy, q0=sol.q).value
    ) / (2 * hy)
    Y = y * Z
    rhs_u = float(np.dot(w, spec.dU(c) * c))
    rhs_v = tree.expectation(spec.dV(tree.gamma * Y) * Y) * tree.dt
    deriv = {
        "x_u_prime": abs(x * u_prime - rhs_u) / max(1.0, abs(rhs_u)),
        "y_v_prime": abs(y * v_prime - rhs_v) / max(1.0, abs(rhs_v)),
        "u_prime_minus_y": abs(u_prime - y) / max(1.0, y),
    }

    tail = tree.tail_clock_mass
    trunc = tail * float(np.max(np.abs(spec.U(c[tree.terminal])))) if math.isfinite(tail) else math.inf

    return DualityReport(
        x=float(x),
        y_star=float(y),
        u_of_x=u_val,
        v_of_y=float(v_val),
        u_direct=u_direct,
        conjugacy_gap=float(conj_gap),
        pdc_max_residual=pdc,
        budget_residual=float(budget),
        budget_residual_unit=float(budget_unit),
        martingale_max_residual=mart,
        terminal_deflated_wealth_max=term,
        potential=potential,
        potential_decreasing=decreasing,
        derivative_identity_residuals=deriv,
        hedge_residual=float(hedge_res),
        hedge_admissible=bool(adm.ok),
        dual_iterations=sol.iterations,
        dual_stationarity=sol.stationarity,
        truncation_bound=trunc,
        utility=spec.describe(),
        tree=tree.describe(),
        Z=Z,
        c=c,
        X=X,
        M=M,
        H=H,
    )


# --------------------------------------------------------------------------
# conjugacy scan
# --------------------------------------------------------------------------
@dataclass
class ConjugacyScan:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    v: np.ndarray
    grid_inf: np.ndarray
    grid_argmin: np.ndarray
    solved_inf: np.ndarray
    y_star: np.ndarray

    @property
    def grid_gap(self) -> np.ndarray:
        """``inf_y [v(y) + x y] - u(x)`` over the grid; non-negative by weak duality."""
        return self.grid_inf - self.u

    @property
    def solved_gap(self) -> np.ndarray:
        return self.solved_inf - self.u

    def rows(self):
        for i in range(self.x.size):
            yield {
                "x": self.x[i],
                "u": self.u[i],
                "grid_inf": self.grid_inf[i],
                "grid_argmin_y": self.grid_argmin[i],
                "grid_gap": self.grid_gap[i],
                "y_star": self.y_star[i],
                "solved_inf": self.solved_inf[i],
                "solved_gap": self.solved_gap[i],
            }


def conjugacy_scan(tree: EventTree, spec: UtilitySpec, x_grid, y_grid, oracle: bool | None = None) -> ConjugacyScan:
    """Tabulate ``u(x)``, ``v(y)`` and ``inf_y [v(y) + x y]``.

    ``u`` comes from the direct primal solver on oracle-scale trees, from the
    dual route otherwise.  The solved infimum is ``v(y*) + x y*`` at the
    calibrated multiplier.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    if oracle is None:
        oracle = tree.horizon <= 4 and tree.max_branching <= 3
    q = None
    v = np.empty(y_grid.size)
    for j, yy in enumerate(y_grid):
        sol = solve_dual(tree, spec, yy, q0=q)
        q = sol.q
        v[j] = sol.value
    u = np.empty(x_grid.size)
    solved = np.empty(x_grid.size)
    ystar = np.empty(x_grid.size)
    for i, xx in enumerate(x_grid):
        cal = calibrate(tree, spec, xx, q0=q)
        ystar[i] = cal.y
        solved[i] = cal.dual.value + xx * cal.y
        u[i] = solve_primal_direct(tree, spec, xx).value if oracle else solved[i]
    table = v[None, :] + x_grid[:, None] * y_grid[None, :]
    k = np.argmin(table, axis=1)
    return ConjugacyScan(
        x_grid, u, y_grid, v, table[np.arange(x_grid.size), k], y_grid[k], solved, ystar
    )
