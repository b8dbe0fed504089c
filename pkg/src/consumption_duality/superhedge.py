"""Smallest dominating wealth processes and their optional decomposition on trees.

Given a non-negative target ``b`` on the nodes, the smallest process ``W``
that dominates ``b`` and is a supermartingale under every one-step martingale
measure is computed by backward induction.  It splits as

    W = W0 + (phi . S) - A

with ``A`` non-decreasing and ``A(root) = 0``; ``phi`` is a superhedging
strategy for the target.  Martingale measures are taken from the closed
polytope (zero floor), over which the supremum defining ``W`` is attained at
a vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import DecompositionError, DomainError
from .tree import EventTree, cumulative_consumption, is_admissible, _plan_array

VERTEX_LIMIT = 4
DECOMPOSITION_TOL = 1e-10


@dataclass(frozen=True)
class SuperhedgeResult:
    W: np.ndarray
    phi: np.ndarray
    A: np.ndarray
    W0: float
    target: np.ndarray

    def reconstruction_residual(self, tree: EventTree) -> float:
        """Largest ``|W0 + (phi . S) - A - W|`` over all nodes."""
        gains = np.zeros(tree.n_nodes)
        for lvl in tree.levels[1:]:
            par = tree.parent[lvl]
            dS = tree.prices[lvl] - tree.prices[par]
            gains[lvl] = gains[par] + np.einsum("ij,ij->i", self.phi[par], dS)
        return float(np.max(np.abs(self.W0 + gains - self.A - self.W)))

    def min_increment(self, tree: EventTree) -> float:
        """Smallest one-step increment of ``A`` (non-negative for a valid decomposition)."""
        rest = np.arange(1, tree.n_nodes)
        if rest.size == 0:
            return 0.0
        return float(np.min(self.A[rest] - self.A[tree.parent[rest]]))


def _node_array(tree: EventTree, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape != (tree.n_nodes,):
        raise ValueError(f"target must have one value per node ({tree.n_nodes})")
    if not np.all(np.isfinite(b)):
        raise ValueError("target must be finite")
    return b


def _max_over_polytope(tree: EventTree, node: int, values: np.ndarray, floor: float) -> float:
    poly = tree.polytope(node, floor)
    if poly.is_singleton:
        return float(poly.point @ values)
    if values.size <= VERTEX_LIMIT:
        return float(np.max(poly.vertices() @ values))
    res = linprog(
        -values, A_eq=poly.A, b_eq=poly.b, bounds=[(floor, None)] * values.size, method="highs"
    )
    if res.status != 0:
        raise DecompositionError(f"polytope LP failed at node {node}: {res.message}")
    return float(-res.fun)


def smallest_dominating(tree: EventTree, b, floor: float = 0.0) -> np.ndarray:
    """Smallest process dominating ``b`` that is a supermartingale under all martingale measures.

    ``W(leaf) = b(leaf)`` and ``W(node) = max(b(node), max_q sum_i q_i W(child_i))``
    with ``q`` ranging over the node's martingale polytope.
    """
    b = _node_array(tree, b)
    if np.any(b < 0):
        raise DomainError("target process must be non-negative")
    W = b.copy()
    for lvl in reversed(tree.levels[:-1]):
        for node in lvl:
            kids = tree.children[node]
            W[node] = max(b[node], _max_over_polytope(tree, int(node), W[kids], floor))
    return W


def _hedge_1d(a: np.ndarray, w: np.ndarray, node: int) -> float:
    """Minimum-norm minimiser of ``max_i(phi a_i - w_i)`` subject to ``phi a_i >= w_i``."""
    scale = max(1.0, float(np.max(np.abs(w))))
    tol = DECOMPOSITION_TOL * scale
    flat = np.abs(a) <= 1e-15
    if np.any(w[flat] > tol):
        raise DecompositionError(f"node {node}: value rises on a branch where prices do not move")
    up, dn = a > 1e-15, a < -1e-15
    lo = float(np.max(w[up] / a[up])) if up.any() else -math.inf
    hi = float(np.min(w[dn] / a[dn])) if dn.any() else math.inf
    if lo > hi:
        if (lo - hi) * float(np.max(np.abs(a))) > tol:
            raise DecompositionError(f"node {node}: no superhedging position exists")
        lo = hi = 0.5 * (lo + hi)

    def worst(phi):
        return float(np.max(phi * a - w))

    cands = [v for v in (lo, hi) if math.isfinite(v)]
    idx = np.flatnonzero(~flat)
    for i in idx:
        for j in idx:
            if a[i] != a[j]:
                v = (w[i] - w[j]) / (a[i] - a[j])
                if lo <= v <= hi:
                    cands.append(v)
    if not cands:
        # unbounded interval on both sides cannot happen with two signs present
        cands = [0.0]
    g = min(worst(v) for v in cands)
    lo2, hi2 = lo, hi
    if up.any():
        hi2 = min(hi2, float(np.min((g + w[up]) / a[up])))
    if dn.any():
        lo2 = max(lo2, float(np.max((g + w[dn]) / a[dn])))
    if lo2 > hi2:
        lo2 = hi2 = 0.5 * (lo2 + hi2)
    return float(np.clip(0.0, lo2, hi2))


def _hedge_nd(a: np.ndarray, w: np.ndarray, node: int) -> np.ndarray:
    k, d = a.shape
    scale = max(1.0, float(np.max(np.abs(w))))
    # variables (phi, t): minimise t subject to 0 <= phi . a_i - w_i <= t
    c = np.zeros(d + 1)
    c[-1] = 1.0
    A_ub = np.vstack([np.hstack([-a, np.zeros((k, 1))]), np.hstack([a, -np.ones((k, 1))])])
    b_ub = np.concatenate([-w, w])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (d + 1), method="highs")
    if res.status != 0:
        raise DecompositionError(f"node {node}: hedge LP failed ({res.message})")
    phi0, t_star = res.x[:d], float(res.x[-1])
    cap = t_star + DECOMPOSITION_TOL * scale
    cons = [
        {"type": "ineq", "fun": lambda p: a @ p - w, "jac": lambda p: a},
        {"type": "ineq", "fun": lambda p: cap - (a @ p - w), "jac": lambda p: -a},
    ]
    opt = minimize(
        lambda p: 0.5 * float(p @ p),
        phi0,
        jac=lambda p: p,
        constraints=cons,
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 500},
    )
    phi = opt.x
    slack = a @ phi - w
    if not opt.success or np.min(slack) < -DECOMPOSITION_TOL * scale or np.max(slack) > cap + 1e-9 * scale:
        phi = phi0
    return phi


def optional_decomposition(tree: EventTree, W) -> tuple[np.ndarray, np.ndarray]:
    """Split ``W`` into a hedge ``phi`` and a non-decreasing process ``A``.

    At each node ``phi`` satisfies ``phi . dS_i >= dW_i`` on every branch,
    minimises the largest slack and, among minimisers, has the smallest
    norm.  ``A(child) = A(node) + phi . dS - dW``.
    """
    W = _node_array(tree, W)
    d = tree.n_assets
    phi = np.zeros((tree.n_nodes, d))
    A = np.zeros(tree.n_nodes)
    for lvl in tree.levels[:-1]:
        for node in lvl:
            kids = tree.children[node]
            dS = tree.prices[kids] - tree.prices[node]
            dW = W[kids] - W[node]
            if np.all(np.abs(dW) == 0):
                h = np.zeros(d)
            elif d == 1:
                h = np.array([_hedge_1d(dS[:, 0], dW, int(node))])
            else:
                h = _hedge_nd(dS, dW, int(node))
            phi[node] = h
            A[kids] = A[node] + dS @ h - dW
    scale = max(1.0, float(np.max(np.abs(W))))
    rest = np.arange(1, tree.n_nodes)
    if rest.size and np.min(A[rest] - A[tree.parent[rest]]) < -DECOMPOSITION_TOL * scale:
        raise DecompositionError("decomposition produced a decreasing consumed-value process")
    return phi, A


def superhedge(tree: EventTree, b, floor: float = 0.0) -> SuperhedgeResult:
    b = _node_array(tree, b)
    W = smallest_dominating(tree, b, floor)
    phi, A = optional_decomposition(tree, W)
    return SuperhedgeResult(W, phi, A, float(W[0]), b)


class BudgetCheck(NamedTuple):
    admissible: bool
    W0: float
    hedge: SuperhedgeResult | None


def admissibility_via_budget(tree: EventTree, c, x: float = 1.0, tol: float = 1e-12) -> BudgetCheck:
    """Decide whether capital ``x`` finances the consumption plan ``c``.

    The required capital is the largest pairing ``E[Z_T C_T]`` of the
    cumulative consumption ``C`` with martingale deflators and stopping
    times, which equals ``W0`` of the smallest process dominating ``C``.
    When it does not exceed ``x`` the decomposition yields a strategy, and
    the resulting wealth is verified to stay non-negative.
    """
    c = _plan_array(tree, c)
    if np.any(c < 0):
        raise DomainError("consumption plan must be non-negative")
    C = cumulative_consumption(tree, c, inclusive=True)
    W = smallest_dominating(tree, C)
    W0 = float(W[0])
    if W0 > x + tol * max(1.0, x):
        return BudgetCheck(False, W0, None)
    phi, A = optional_decomposition(tree, W)
    hedge = SuperhedgeResult(W, phi, A, W0, C)
    check = is_admissible(tree, x, phi, c, tol=1e-10 * max(1.0, x))
    if not check.ok:
        raise DecompositionError(
            f"constructed strategy is not admissible (first violation at node {check.first_violation})"
        )
    return BudgetCheck(True, W0, hedge)


def claim_target(tree: EventTree, claim: str) -> np.ndarray:
    """Target process from a short claim description.

    Forms: ``put:K``, ``call:K`` (paid at the horizon), ``american-put:K``,
    ``american-call:K`` (exercisable at every node) and ``consumption:RATE``
    (cumulative consumption of a constant rate).  Payoffs use the first asset.
    """
    kind, _, arg = claim.partition(":")
    try:
        level = float(arg)
    except ValueError:
        raise ValueError(f"claim {claim!r}: expected KIND:NUMBER") from None
    S = tree.prices[:, 0]
    if kind in ("put", "american-put"):
        pay = np.maximum(level - S, 0.0)
    elif kind in ("call", "american-call"):
        pay = np.maximum(S - level, 0.0)
    elif kind == "consumption":
        if level < 0:
            raise ValueError("consumption rate must be non-negative")
        return cumulative_consumption(tree, np.full(tree.n_nodes, level), inclusive=True)
    else:
        raise ValueError(f"unknown claim kind {kind!r}")
    if not kind.startswith("american"):
        pay = np.where(tree.t == tree.horizon, pay, 0.0)
    return pay
