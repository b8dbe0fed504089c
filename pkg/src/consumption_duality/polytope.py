"""Geometry of one-step martingale measures at a tree node.

The set ``{q : sum q = 1, q >= floor, sum_i q_i S_i = S}`` is a polytope in
the probability simplex over the node's children.  This module provides an
affine parametrisation of it, exact Euclidean projection onto it and its
vertex list.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .errors import NoDeflatorError

_TOL = 1e-12


@dataclass(frozen=True)
class MartingalePolytope:
    node: int
    A: np.ndarray
    b: np.ndarray
    floor: float
    point: np.ndarray
    null_basis: np.ndarray
    _vertices: list = field(default_factory=list, repr=False, compare=False)
    _table: list = field(default_factory=list, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.null_basis.shape[1]

    @property
    def is_singleton(self) -> bool:
        return self.dim == 0

    def contains(self, q, tol: float = 1e-10) -> bool:
        q = np.asarray(q, dtype=float)
        scale = max(1.0, float(np.max(np.abs(self.b))))
        return bool(
            q.shape == self.point.shape
            and np.all(q >= self.floor - tol)
            and np.max(np.abs(self.A @ q - self.b)) <= tol * scale
        )

    def project(self, v) -> np.ndarray:
        """Euclidean projection of ``v`` onto the polytope (exact)."""
        v = np.asarray(v, dtype=float)
        if self.dim == 0:
            return self.point.copy()
        if self.dim == 1:
            n = self.null_basis[:, 0]
            lo, hi = _segment(self.point, n, self.floor)
            theta = float(np.clip(n @ (v - self.point), lo, hi))
            q = self.point + theta * n
            return np.maximum(q, self.floor)
        if not self._table:
            self._table.append(_active_set_table(self.A, self.b, self.floor))
        return _project_active_set(self.A, self.b, self.floor, v, self._table[0])

    def vertices(self) -> np.ndarray:
        """All vertices, one per row (cached)."""
        if not self._vertices:
            self._vertices.append(_enumerate_vertices(self.A, self.b, self.floor, self.point))
        return self._vertices[0]


def build_polytope(node: int, child_prices, node_price, floor: float, reference=None):
    """Polytope of martingale transition measures from ``node``.

    ``child_prices`` is ``(k, d)``, ``node_price`` is ``(d,)``.  ``reference``
    (typically the physical transition probabilities) is projected onto the
    polytope to obtain the stored feasible point.

    Raises :class:`NoDeflatorError` when the polytope is empty.
    """
    child_prices = np.atleast_2d(np.asarray(child_prices, dtype=float))
    k = child_prices.shape[0]
    A = np.vstack([np.ones(k), child_prices.T])
    b = np.concatenate([[1.0], np.asarray(node_price, dtype=float)])
    if k * floor > 1.0:
        raise NoDeflatorError(node, f"floor {floor:g} infeasible for {k} children")

    res = linprog(
        np.zeros(k), A_eq=A, b_eq=b, bounds=[(floor, None)] * k, method="highs"
    )
    if res.status != 0:
        raise NoDeflatorError(node)
    q0 = _polish(A, b, floor, np.asarray(res.x))
    if np.max(np.abs(A @ q0 - b)) > 1e-9 * max(1.0, np.max(np.abs(b))):
        raise NoDeflatorError(node)

    N = null_space(A, rcond=1e-12)
    if N.shape[1] == 1:
        # sign convention: first nonzero entry positive, for reproducibility
        nz = np.flatnonzero(np.abs(N[:, 0]) > 1e-14)
        if N[nz[0], 0] < 0:
            N = -N
    poly = MartingalePolytope(node, A, b, float(floor), q0, N)
    if reference is not None and N.shape[1] > 0:
        point = poly.project(reference)
        poly = MartingalePolytope(node, A, b, float(floor), point, N)
    return poly


def _polish(A, b, floor, q):
    q = q - np.linalg.pinv(A) @ (A @ q - b)
    return np.maximum(q, floor)


def _segment(q0, n, floor):
    lo, hi = -np.inf, np.inf
    for qi, ni in zip(q0, n):
        if ni > 1e-15:
            lo = max(lo, (floor - qi) / ni)
        elif ni < -1e-15:
            hi = min(hi, (floor - qi) / ni)
    if lo > hi:
        lo = hi = 0.5 * (lo + hi)
    return lo, hi


def _active_set_table(A, b, floor):
    """Precomputed affine maps ``q_F = P v_F + r`` for every candidate active set."""
    k = A.shape[1]
    if k > 16:
        raise ValueError("active-set projection is limited to 16 children")
    rank = np.linalg.matrix_rank(A)
    l = np.full(k, floor)
    table = []
    for size in range(0, k - rank + 1):
        for J in itertools.combinations(range(k), size):
            J = list(J)
            F = [i for i in range(k) if i not in J]
            AF, AJ = A[:, F], A[:, J]
            if np.linalg.matrix_rank(AF) < rank:
                continue
            Gp = np.linalg.pinv(AF @ AF.T, rcond=1e-13)
            base = b - AJ @ l[J]
            P = np.eye(len(F)) - AF.T @ Gp @ AF
            r = AF.T @ Gp @ base
            # multipliers of the active bounds: mu = l_J - v_J + AJ^T nu, nu = Gp (AF v_F - base)
            table.append((np.array(J, dtype=int), np.array(F, dtype=int), P, r, AJ.T @ Gp, AF, base))
    return table


def _project_active_set(A, b, floor, v, table=None):
    """Solve ``min |q - v|^2  s.t.  A q = b, q >= floor`` by active-set enumeration.

    The problem is a strictly convex QP; its minimiser is the candidate whose
    KKT conditions hold.  Picking the candidate with the smallest KKT
    violation keeps the result well defined under rounding.
    """
    if table is None:
        table = _active_set_table(A, b, floor)
    k = v.size
    scale = max(1.0, float(np.max(np.abs(v))))
    best, best_viol = None, math.inf
    for J, F, P, r, AJtGp, AF, base in table:
        qF = P @ v[F] + r
        viol = max(0.0, float(np.max(floor - qF, initial=-math.inf)))
        if J.size:
            mu = floor - v[J] + AJtGp @ (AF @ v[F] - base)
            viol = max(viol, float(np.max(-mu)) / scale)
        if viol < best_viol:
            best_viol = viol
            best = (F, qF)
            if viol <= _TOL:
                break
    q = np.full(k, floor)
    q[best[0]] = best[1]
    return np.maximum(q, floor)


def _enumerate_vertices(A, b, floor, feasible):
    k = A.shape[1]
    # independent row subset, so that square subsystems are well posed
    keep = []
    for i in range(A.shape[0]):
        if np.linalg.matrix_rank(A[keep + [i]]) > len(keep):
            keep.append(i)
    rank = len(keep)
    A_r, b_r = A[keep], b[keep]
    found = []
    for S in itertools.combinations(range(k), rank):
        S = list(S)
        AS = A_r[:, S]
        if AS.shape[0] != AS.shape[1] or abs(np.linalg.det(AS)) < 1e-14:
            continue
        rest = [i for i in range(k) if i not in S]
        q = np.full(k, floor)
        q[S] = np.linalg.solve(AS, b_r - A_r[:, rest] @ q[rest])
        if np.all(q >= floor - _TOL) and np.max(np.abs(A @ q - b)) <= 1e-10:
            q = np.maximum(q, floor)
            if not any(np.allclose(q, f, atol=1e-13, rtol=0) for f in found):
                found.append(q)
    if not found:
        found.append(np.asarray(feasible, dtype=float))
    return np.array(found)
