"""Finite event-tree markets.

Nodes are stored in flat arrays indexed by node id; node 0 is the root.
Consumption ``c[n]`` is a rate over the period following node ``n``, so
``c[n] * dt`` leaves the wealth at ``n``.  Wealth ``X[n]`` is recorded
*before* the consumption at ``n``.  At terminal nodes the remaining wealth
must cover the final consumption: ``c[n] * dt <= X[n]``.

The time weights follow a geometric clock: ``kappa_t = exp(-alpha t dt) dt``
and ``gamma_t = dt / kappa_t = exp(alpha t dt)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidMeasureError, TreeSizeError
from .polytope import MartingalePolytope, build_polytope

Q_MIN = 1e-9
ADMISSIBILITY_TOL = 1e-12
DEFAULT_MAX_NODES = 200_000


@dataclass(frozen=True, eq=False)
class EventTree:
    t: np.ndarray
    parent: np.ndarray
    prob: np.ndarray
    prices: np.ndarray
    alpha: float = 0.0
    dt: float = 1.0
    children: tuple = field(init=False, repr=False)
    levels: tuple = field(init=False, repr=False)
    path_prob: np.ndarray = field(init=False, repr=False)
    _polytopes: dict = field(init=False, repr=False, default_factory=dict)
    _cache: dict = field(init=False, repr=False, default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=int)
        parent = np.asarray(self.parent, dtype=int)
        prob = np.asarray(self.prob, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim == 1:
            prices = prices[:, None]
        n = t.size
        if not (parent.size == prob.size == prices.shape[0] == n) or n == 0:
            raise ValueError("node arrays have inconsistent lengths")
        if t[0] != 0 or parent[0] != -1 or np.count_nonzero(parent == -1) != 1:
            raise ValueError("node 0 must be the unique root, at t = 0")
        if self.dt <= 0 or self.alpha < 0:
            raise ValueError("need dt > 0 and alpha >= 0")
        if np.any(prices <= 0) or not np.all(np.isfinite(prices)):
            raise ValueError("all prices must be strictly positive")
        nonroot = np.arange(1, n)
        if np.any(parent[1:] < 0) or np.any(parent[1:] >= n):
            raise ValueError("invalid parent index")
        if np.any(t[nonroot] != t[parent[nonroot]] + 1):
            raise ValueError("each child must sit one period after its parent")
        if np.any(prob[1:] <= 0):
            raise ValueError("transition probabilities must be positive")

        kids = [[] for _ in range(n)]
        for i in nonroot:
            kids[parent[i]].append(i)
        children = tuple(np.array(k, dtype=int) for k in kids)
        horizon = int(t.max())
        for i, k in enumerate(children):
            if t[i] < horizon and k.size < 2:
                raise ValueError(f"non-terminal node {i} has fewer than 2 children")
            if t[i] == horizon and k.size:
                raise ValueError("terminal nodes must lie at the horizon")
            if k.size and abs(prob[k].sum() - 1.0) > 1e-12:
                raise ValueError(f"transition probabilities at node {i} do not sum to 1")

        levels = tuple(np.flatnonzero(t == s) for s in range(horizon + 1))
        path_prob = prob.copy()
        path_prob[0] = 1.0
        for lvl in levels[1:]:
            path_prob[lvl] = path_prob[parent[lvl]] * prob[lvl]

        for name, val in (("t", t), ("parent", parent), ("prob", prob), ("prices", prices)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "path_prob", path_prob)

    # -- shape --------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return self.t.size

    @property
    def horizon(self) -> int:
        return int(self.t.max())

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]

    @property
    def nonterminal(self) -> np.ndarray:
        return np.flatnonzero(self.t < self.horizon)

    @property
    def terminal(self) -> np.ndarray:
        return self.levels[-1]

    @property
    def max_branching(self) -> int:
        return max((c.size for c in self.children), default=0)

    # -- clock --------------------------------------------------------------
    @property
    def kappa(self) -> np.ndarray:
        """Per-node clock weight ``kappa_t``."""
        return np.exp(-self.alpha * self.t * self.dt) * self.dt

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.alpha * self.t * self.dt)

    @property
    def clock_mass(self) -> float:
        return float(sum(math.exp(-self.alpha * s * self.dt) * self.dt for s in range(self.horizon + 1)))

    @property
    def tail_clock_mass(self) -> float:
        """Clock mass beyond the horizon, ``sum_{t > T} kappa_t`` (inf when alpha = 0)."""
        if self.alpha == 0:
            return math.inf
        r = math.exp(-self.alpha * self.dt)
        return self.dt * r ** (self.horizon + 1) / (1.0 - r)

    # -- tree algebra -------------------------------------------------------
    def conditional_expectation(self, f) -> np.ndarray:
        """``E[f(child) | node]`` for every node (0 at terminal nodes)."""
        f = np.asarray(f, dtype=float)
        out = np.zeros((self.n_nodes,) + f.shape[1:])
        for lvl in self.levels[1:]:
            w = self.prob[lvl].reshape((-1,) + (1,) * (f.ndim - 1))
            np.add.at(out, self.parent[lvl], w * f[lvl])
        return out

    def subtree_sum(self, f) -> np.ndarray:
        """``sum`` of ``f`` over each node's subtree, node included."""
        acc = np.array(f, dtype=float, copy=True)
        for lvl in reversed(self.levels[1:]):
            np.add.at(acc, self.parent[lvl], acc[lvl])
        return acc

    def strict_ancestor_sum(self, f) -> np.ndarray:
        """``sum_{s < node} f(s)`` along the path from the root."""
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        for lvl in self.levels[1:]:
            par = self.parent[lvl]
            out[lvl] = out[par] + f[par]
        return out

    def expectation(self, f) -> float:
        return float(np.dot(self.path_prob, f))

    # -- polytopes ----------------------------------------------------------
    def polytope(self, node: int, floor: float = Q_MIN) -> MartingalePolytope:
        key = (int(node), float(floor))
        if key not in self._polytopes:
            kids = self.children[node]
            if kids.size == 0:
                raise ValueError(f"node {node} is terminal")
            self._polytopes[key] = build_polytope(
                int(node), self.prices[kids], self.prices[node], floor, reference=self.prob[kids]
            )
        return self._polytopes[key]

    def describe(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "horizon": self.horizon,
            "assets": self.n_assets,
            "max_branching": self.max_branching,
            "alpha": self.alpha,
            "dt": self.dt,
        }


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------
def build_recombining(
    branching: int,
    T: int,
    price_moves,
    probabilities,
    alpha: float = 0.0,
    dt: float = 1.0,
    s0=1.0,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> EventTree:
    """Node-expanded tree with the same multiplicative price moves at every node.

    ``price_moves`` holds one factor per branch (shape ``(branching,)`` or
    ``(branching, d)`` for ``d`` assets).
    """
    if branching < 2 or T < 0:
        raise ValueError("need branching >= 2 and T >= 0")
    moves = np.asarray(price_moves, dtype=float)
    if moves.ndim == 1:
        moves = moves[:, None]
    probs = np.asarray(probabilities, dtype=float)
    if moves.shape[0] != branching or probs.shape != (branching,):
        raise ValueError("need one price move and one probability per branch")
    if np.any(moves <= 0):
        raise ValueError("price moves must be positive")
    if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("probabilities must be positive and sum to 1")
    n = sum(branching**s for s in range(T + 1))
    if n > max_nodes:
        raise TreeSizeError(f"{n} nodes exceeds the cap of {max_nodes}")

    s0 = np.broadcast_to(np.asarray(s0, dtype=float), (moves.shape[1],))
    t, parent, prob, prices = [0], [-1], [1.0], [s0.copy()]
    frontier = [0]
    for step in range(1, T + 1):
        nxt = []
        for node in frontier:
            for j in range(branching):
                t.append(step)
                parent.append(node)
                prob.append(probs[j])
                prices.append(prices[node] * moves[j])
                nxt.append(len(t) - 1)
        frontier = nxt
    return EventTree(np.array(t), np.array(parent), np.array(prob), np.array(prices), alpha, dt)


def random_tree(
    rng: np.random.Generator,
    T: int,
    branching: int,
    d: int = 1,
    alpha: float = 0.0,
    dt: float = 1.0,
    spread: float = 0.4,
) -> EventTree:
    """Random arbitrage-free tree with per-node price moves.

    At every node a strictly positive martingale measure is drawn first and
    the multiplicative moves are rescaled so that prices are one-step
    martingales under it, which guarantees non-empty polytopes.  Physical
    probabilities are drawn independently.
    """
    if branching < 2:
        raise ValueError("branching must be >= 2")
    t, parent, prob, prices = [0], [-1], [1.0], [np.ones(d)]
    frontier = [0]
    for step in range(1, T + 1):
        nxt = []
        for node in frontier:
            q = rng.dirichlet(np.full(branching, 2.0))
            q = 0.05 / branching + (1 - 0.05) * q
            f = np.exp(rng.uniform(-spread, spread, size=(branching, d)))
            f /= q @ f
            p = rng.dirichlet(np.full(branching, 2.0))
            p = 0.1 / branching + 0.9 * p
            p /= p.sum()
            for j in range(branching):
                t.append(step)
                parent.append(node)
                prob.append(p[j])
                prices.append(prices[node] * f[j])
                nxt.append(len(t) - 1)
        frontier = nxt
    return EventTree(np.array(t), np.array(parent), np.array(prob), np.array(prices), alpha, dt)


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------
def tree_to_dict(tree: EventTree) -> dict:
    nodes = [
        {
            "id": i,
            "t": int(tree.t[i]),
            "parent": int(tree.parent[i]) if i else None,
            "prob": float(tree.prob[i]),
            "prices": [float(v) for v in tree.prices[i]],
        }
        for i in range(tree.n_nodes)
    ]
    return {"nodes": nodes, "clock": {"alpha": tree.alpha, "dt": tree.dt, "T": tree.horizon}}


def tree_from_dict(data: dict) -> EventTree:
    nodes = sorted(data["nodes"], key=lambda nd: nd["id"])
    if [nd["id"] for nd in nodes] != list(range(len(nodes))):
        raise ValueError("node ids must be 0..n-1")
    clock = data.get("clock", {})
    tree = EventTree(
        np.array([nd["t"] for nd in nodes]),
        np.array([-1 if nd.get("parent") is None else nd["parent"] for nd in nodes]),
        np.array([nd.get("prob", 1.0) for nd in nodes]),
        np.array([nd["prices"] for nd in nodes], dtype=float),
        float(clock.get("alpha", 0.0)),
        float(clock.get("dt", 1.0)),
    )
    if "T" in clock and int(clock["T"]) != tree.horizon:
        raise ValueError(f"clock T={clock['T']} disagrees with node times (T={tree.horizon})")
    return tree


def save_tree(tree: EventTree, path) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree), indent=1) + "\n")


def load_tree(path) -> EventTree:
    return tree_from_dict(json.loads(Path(path).read_text()))


def with_clock(tree: EventTree, alpha: float | None = None, dt: float | None = None) -> EventTree:
    return EventTree(
        tree.t,
        tree.parent,
        tree.prob,
        tree.prices,
        tree.alpha if alpha is None else float(alpha),
        tree.dt if dt is None else float(dt),
    )


# --------------------------------------------------------------------------
# wealth, admissibility, deflators
# --------------------------------------------------------------------------
def _strategy_array(tree: EventTree, H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if H.ndim == 0:
        H = np.full((tree.n_nodes, tree.n_assets), float(H))
    elif H.ndim == 1:
        if tree.n_assets == 1 and H.size == tree.n_nodes:
            H = H[:, None]
        else:
            H = np.broadcast_to(H, (tree.n_nodes, tree.n_assets))
    return H


def _plan_array(tree: EventTree, c) -> np.ndarray:
    return np.broadcast_to(np.asarray(c, dtype=float), (tree.n_nodes,))


def wealth_process(tree: EventTree, x: float, H, c) -> np.ndarray:
    """Pre-consumption wealth ``X`` with ``X[root] = x`` and
    ``X[child] = X[node] + H[node].(S[child] - S[node]) - c[node] dt``.
    """
    if x <= 0:
        raise ValueError("initial capital must be positive")
    H = _strategy_array(tree, H)
    c = _plan_array(tree, c)
    X = np.empty(tree.n_nodes)
    X[0] = x
    for lvl in tree.levels[1:]:
        par = tree.parent[lvl]
        gain = np.einsum("ij,ij->i", H[par], tree.prices[lvl] - tree.prices[par])
        X[lvl] = X[par] + gain - c[par] * tree.dt
    return X


def self_financing_wealth(tree: EventTree, x: float, H) -> np.ndarray:
    """``X0 = x + (H . S)``, the wealth with no consumption."""
    return wealth_process(tree, x, H, 0.0)


def cumulative_consumption(tree: EventTree, c, inclusive: bool = True) -> np.ndarray:
    """``C[node] = sum of c dt`` over the path to ``node`` (node included by default)."""
    c = _plan_array(tree, c) * tree.dt
    before = tree.strict_ancestor_sum(c)
    return before + c if inclusive else before


class Admissibility(NamedTuple):
    ok: bool
    first_violation: int | None
    violations: tuple


def is_admissible(tree: EventTree, x: float, H, c, tol: float = ADMISSIBILITY_TOL) -> Admissibility:
    """Wealth must stay non-negative and terminal wealth must cover final consumption."""
    c = _plan_array(tree, c)
    if np.any(c < 0):
        bad = tuple(int(i) for i in np.flatnonzero(c < 0))
        return Admissibility(False, bad[0], bad)
    X = wealth_process(tree, x, H, c)
    viol = X < -tol
    term = tree.terminal
    viol[term] |= X[term] - c[term] * tree.dt < -tol
    bad = tuple(int(i) for i in np.flatnonzero(viol))
    return Admissibility(not bad, bad[0] if bad else None, bad)


def one_step_martingale_polytope(tree: EventTree, node: int, floor: float = Q_MIN) -> MartingalePolytope:
    """Polytope of one-step martingale measures at ``node``.

    Raises :class:`~consumption_duality.errors.NoDeflatorError` if empty.
    """
    return tree.polytope(node, floor)


def deflator_from_transitions(tree: EventTree, q, y: float = 1.0, floor: float = Q_MIN, check: bool = True) -> np.ndarray:
    """Density-type deflator ``Z[child] = Z[node] q[child] / p[child]`` with ``Z[root] = y``.

    ``q`` is node-indexed: ``q[m]`` is the martingale transition probability
    into node ``m`` from its parent (``q[0]`` is ignored).
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (tree.n_nodes,):
        raise InvalidMeasureError("q must be node-indexed")
    if check:
        for node in tree.nonterminal:
            kids = tree.children[node]
            if not tree.polytope(node, floor).contains(q[kids]):
                raise InvalidMeasureError(f"transition measure at node {node} is outside its polytope")
    Z = np.empty(tree.n_nodes)
    Z[0] = y
    for lvl in tree.levels[1:]:
        Z[lvl] = Z[tree.parent[lvl]] * q[lvl] / tree.prob[lvl]
    return Z


def default_transitions(tree: EventTree, floor: float = Q_MIN) -> np.ndarray:
    """Node-indexed transition measure built from each polytope's stored point."""
    q = np.ones(tree.n_nodes)
    for node in tree.nonterminal:
        q[tree.children[node]] = tree.polytope(node, floor).point
    return q


def random_transitions(tree: EventTree, rng: np.random.Generator, floor: float = Q_MIN) -> np.ndarray:
    """Random node-indexed martingale transition measure (a convex mix of vertices)."""
    q = np.ones(tree.n_nodes)
    for node in tree.nonterminal:
        poly = tree.polytope(node, floor)
        V = poly.vertices()
        w = rng.dirichlet(np.ones(V.shape[0]))
        q[tree.children[node]] = w @ V
    return q


def deflated_gains(tree: EventTree, Y, X, c) -> np.ndarray:
    """``X Y + sum_{s < node} c Y dt`` with ``X`` pre-consumption wealth."""
    c = _plan_array(tree, c)
    Y = np.asarray(Y, dtype=float)
    return np.asarray(X) * Y + tree.strict_ancestor_sum(c * Y * tree.dt)


def supermartingale_residual(tree: EventTree, Y, x: float, H, c) -> float:
    """Largest one-step increase of deflated wealth plus cumulative deflated consumption.

    A value ``<= 0`` (up to rounding) certifies the supermartingale property
    on this particular ``(X, c)``.
    """
    X = wealth_process(tree, x, H, c)
    G = deflated_gains(tree, Y, X, c)
    nt = tree.nonterminal
    if nt.size == 0:
        return 0.0
    return float(np.max(tree.conditional_expectation(G)[nt] - G[nt]))


def budget_pairing(tree: EventTree, c, Y) -> float:
    """``<c, Y> = E[sum_t c_t Y_t dt]``."""
    c = _plan_array(tree, c)
    return tree.expectation(c * np.asarray(Y, dtype=float)) * tree.dt
