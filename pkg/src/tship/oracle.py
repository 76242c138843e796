"""Transshipment oracles.

``exact_transshipment`` solves ``min cost(z) s.t. A z = q`` with successive
shortest paths and returns optimal node potentials, i.e. an optimal solution
of ``max q^T h s.t. q(R_* A^T h) <= 1``.  ``brute_force_tree`` is an
independent check for tiny graphs.  ``ExactOracle`` and ``SpannerOracle``
wrap these into the direction oracle used by the gradient descent: they
return potentials h with ``||W_-^{-1} A^T h||_inf = 1`` and an
alpha-approximate value of ``max q^T h``.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .graph import ArcSystem


@dataclass
class OracleSolution:
    """Primal flow (signed, per edge), dual potentials and objective value."""

    flow: np.ndarray
    potentials: np.ndarray | None
    value: float


@njit(cache=True)
def _heap_push(hk, hv, size, key, val):
    i = size
    hk[i] = key
    hv[i] = val
    while i > 0:
        p = (i - 1) >> 1
        if hk[p] <= hk[i]:
            break
        hk[p], hk[i] = hk[i], hk[p]
        hv[p], hv[i] = hv[i], hv[p]
        i = p
    return size + 1


@njit(cache=True)
def _heap_pop(hk, hv, size):
    key = hk[0]
    val = hv[0]
    size -= 1
    if size > 0:
        hk[0] = hk[size]
        hv[0] = hv[size]
        i = 0
        while True:
            l = 2 * i + 1
            if l >= size:
                break
            c = l
            if l + 1 < size and hk[l + 1] < hk[l]:
                c = l + 1
            if hk[i] <= hk[c]:
                break
            hk[c], hk[i] = hk[i], hk[c]
            hv[c], hv[i] = hv[i], hv[c]
            i = c
    return key, val, size


@njit(cache=True)
def _ssp(n, tail, head, wp, wm, q, adj_ptr, adj_edge, tol, phi0):
    """Successive shortest paths with reduced costs.

    Residual arcs of edge e = (t, h): t -> h costs ``-wm`` while flow runs
    h -> t (capacity = that flow) and ``wp`` otherwise; symmetrically for
    h -> t.  Each Dijkstra run settles every open sink; flow is then pushed
    along all shortest-path-tree paths that still have capacity, since tree
    arcs have zero reduced cost.  ``phi0`` must be dual feasible (zero works
    for non-negative weights).  Returns (flow, potentials, dijkstra runs).
    """
    m = tail.size
    z = np.zeros(m)
    phi = phi0.copy()
    d = q.copy()  # outstanding demand; negative entries still have to ship
    dist = np.empty(n)
    done = np.zeros(n, dtype=np.bool_)
    pred = np.empty(n, dtype=np.int64)
    cancel = np.zeros(n, dtype=np.bool_)
    sinks = np.empty(n, dtype=np.int64)
    hk = np.empty(2 * m + n + 1)
    hv = np.empty(2 * m + n + 1, dtype=np.int64)
    runs = 0
    while True:
        size = 0
        open_sinks = 0
        for v in range(n):
            dist[v] = np.inf
            done[v] = False
            pred[v] = -1
            if d[v] > tol:
                open_sinks += 1
        for v in range(n):
            if d[v] < -tol:
                dist[v] = 0.0
                size = _heap_push(hk, hv, size, 0.0, v)
        if size == 0 or open_sinks == 0:
            break
        ns = 0
        D = 0.0
        while size > 0 and ns < open_sinks:
            key, u, size = _heap_pop(hk, hv, size)
            if done[u] or key > dist[u]:
                continue
            done[u] = True
            D = key
            if d[u] > tol:
                sinks[ns] = u
                ns += 1
            for k in range(adj_ptr[u], adj_ptr[u + 1]):
                e = adj_edge[k]
                if tail[e] == u:
                    v = head[e]
                    canc = z[e] < 0
                    c = -wm[e] if canc else wp[e]
                else:
                    v = tail[e]
                    canc = z[e] > 0
                    c = -wp[e] if canc else wm[e]
                if done[v]:
                    continue
                nd = key + c + phi[u] - phi[v]
                if nd < key:
                    nd = key  # clamp rounding noise in reduced costs
                if nd < dist[v]:
                    dist[v] = nd
                    pred[v] = e
                    cancel[v] = canc
                    size = _heap_push(hk, hv, size, nd, v)
        if ns == 0:
            break
        runs += 1
        for v in range(n):
            phi[v] += dist[v] if (done[v] and dist[v] < D) else D
        for j in range(ns):
            sink = sinks[j]
            amt = d[sink]
            v = sink
            while pred[v] >= 0:
                e = pred[v]
                # arcs that were cancellations when the tree was built keep
                # their capacity limit even once partly used
                if head[e] == v:  # traversed t -> h
                    if cancel[v] and -z[e] < amt:
                        amt = -z[e]
                    v = tail[e]
                else:
                    if cancel[v] and z[e] < amt:
                        amt = z[e]
                    v = head[e]
            if -d[v] < amt:
                amt = -d[v]
            if amt <= 0:
                continue
            src = v
            v = sink
            while pred[v] >= 0:
                e = pred[v]
                if head[e] == v:
                    z[e] += amt
                    v = tail[e]
                else:
                    z[e] -= amt
                    v = head[e]
            d[sink] -= amt
            d[src] += amt
    return z, phi, runs


def _adjacency(g: ArcSystem):
    ends = np.concatenate((g.tail, g.head))
    order = np.argsort(ends, kind="stable")
    edge = np.concatenate((np.arange(g.m), np.arange(g.m)))[order]
    ptr = np.zeros(g.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(ends, minlength=g.n), out=ptr[1:])
    return ptr, np.ascontiguousarray(edge, dtype=np.int64)


def exact_transshipment(g: ArcSystem, q, adjacency=None, warm=None) -> OracleSolution:
    """Optimal flow and potentials for demand q (sum zero).

    Forward traversal of an edge costs ``w_plus``, backward ``w_minus``.
    Potentials are normalised so that their minimum is 0 and satisfy
    ``-w_minus <= h[head] - h[tail] <= w_plus``.  ``warm`` may hold feasible
    potentials (e.g. from a previous solve) to start from.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.shape != (g.n,):
        raise ValueError(f"demand must have length {g.n}")
    scale = float(np.sum(np.abs(q)))
    if abs(float(np.sum(q))) > 1e-9 * max(scale, 1.0):
        raise ValueError("demand does not sum to zero")
    if scale == 0:
        return OracleSolution(np.zeros(g.m), np.zeros(g.n), 0.0)
    ptr, edge = adjacency if adjacency is not None else _adjacency(g)
    phi0 = np.zeros(g.n) if warm is None else np.ascontiguousarray(warm, dtype=np.float64)
    z, phi, _ = _ssp(g.n, g.tail, g.head, g.w_plus, g.w_minus, q, ptr, edge, 1e-13 * scale, phi0)
    # unreachable nodes keep an infinite-free potential; shift to min 0
    h = phi - phi.min()
    cost = float(np.sum(np.where(z > 0, g.w_plus * z, -g.w_minus * z)))
    return OracleSolution(z, h, cost)


def tree_flow(n: int, tail, head, q) -> np.ndarray | None:
    """Unique flow on a spanning tree (edge lists of length n-1) routing q."""
    adj = [[] for _ in range(n)]
    for i, (t, h) in enumerate(zip(tail, head)):
        adj[t].append((h, i))
        adj[h].append((t, i))
    parent = [-1] * n
    pedge = [-1] * n
    order = [0]
    seen = [False] * n
    seen[0] = True
    for u in order:
        for v, i in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                pedge[v] = i
                order.append(v)
    if len(order) != n:
        return None
    z = np.zeros(len(tail))
    sub = np.array(q, dtype=np.float64)
    for v in reversed(order[1:]):
        i = pedge[v]
        # flow towards v along the tree edge must supply v's subtree
        if head[i] == v:
            z[i] = sub[v]
        else:
            z[i] = -sub[v]
        sub[parent[v]] += sub[v]
    return z


def brute_force_tree(g: ArcSystem, q) -> OracleSolution:
    """Cheapest spanning-tree solution by enumeration (``m <= 16``).

    Uncapacitated min-cost flow always has an optimal solution supported on
    a spanning tree, so this is exact.
    """
    if g.m > 16:
        raise ValueError("brute_force_tree is limited to m <= 16")
    q = np.asarray(q, dtype=np.float64)
    if g.n == 1:
        return OracleSolution(np.zeros(g.m), None, 0.0)
    best = None
    for comb in itertools.combinations(range(g.m), g.n - 1):
        idx = list(comb)
        z = tree_flow(g.n, g.tail[idx], g.head[idx], q)
        if z is None:
            continue
        wp, wm = g.w_plus[idx], g.w_minus[idx]
        cost = float(np.sum(np.where(z > 0, wp * z, -wm * z)))
        if best is None or cost < best[0]:
            full = np.zeros(g.m)
            full[idx] = z
            best = (cost, full)
    if best is None:
        raise ValueError("graph is not connected")
    return OracleSolution(best[1], None, best[0])


def dual_objective(q, h) -> float:
    return float(np.dot(np.asarray(q, dtype=np.float64), np.asarray(h, dtype=np.float64)))


def dijkstra(g: ArcSystem, s: int) -> np.ndarray:
    """Directed shortest-path distances from s (forward w_plus, backward w_minus)."""
    adj = [[] for _ in range(g.n)]
    for t, h, wp, wm in zip(g.tail.tolist(), g.head.tolist(),
                            g.w_plus.tolist(), g.w_minus.tolist()):
        adj[t].append((h, wp))
        adj[h].append((t, wm))
    dist = [math.inf] * g.n
    dist[s] = 0.0
    pq = [(0.0, s)]
    while pq:
        du, u = heapq.heappop(pq)
        if du > dist[u]:
            continue
        for v, w in adj[u]:
            nd = du + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(pq, (nd, v))
    return np.array(dist)


@dataclass
class OracleAnswer:
    """Direction returned by an oracle for demand q.

    ``raw`` is the oracle's potential divided by alpha; it is feasible but
    not necessarily tight.  ``h`` rescales it so that
    ``||W_-^{-1} A^T h||_inf = 1``.  The descent only needs ``raw`` since its
    step length and delta do not change when h is scaled.  ``flow`` is a
    signed per-edge flow routing q with ``sum w_minus |flow| <= alpha q^T h``.
    """

    raw: np.ndarray
    q: np.ndarray
    sub_flow: np.ndarray
    edges: np.ndarray
    graph: ArcSystem
    zero_demand: bool = False

    @property
    def h(self) -> np.ndarray:
        g = self.graph
        if g.m == 0:
            return self.raw
        top = float(np.max(np.abs(self.raw[g.head] - self.raw[g.tail]) / g.w_minus))
        return self.raw / top if top > 0 else self.raw

    @property
    def value(self) -> float:
        return float(self.q @ self.h)

    @property
    def flow(self) -> np.ndarray:
        full = np.zeros(self.graph.m)
        full[self.edges] = self.sub_flow
        return full


class _SymmetricOracle:
    alpha: float

    def __init__(self, g: ArcSystem, edges: np.ndarray):
        self.graph = g
        self.edges = np.asarray(edges, dtype=np.int64)
        self.sub = g.symmetrized().subgraph(self.edges)
        self._adj = _adjacency(self.sub)
        self._zero = np.zeros(g.n)
        self.calls = 0

    def __call__(self, q) -> OracleAnswer:
        q = np.ascontiguousarray(q, dtype=np.float64)
        self.calls += 1
        g, sub = self.graph, self.sub
        scale = float(np.abs(q).sum())
        if scale == 0:
            return OracleAnswer(np.zeros(g.n), q, np.zeros(sub.m), self.edges, g, True)
        ptr, edge = self._adj
        z, phi, _ = _ssp(sub.n, sub.tail, sub.head, sub.w_plus, sub.w_minus, q,
                         ptr, edge, 1e-13 * scale, self._zero)
        raw = phi / self.alpha if self.alpha != 1 else phi
        return OracleAnswer(raw, q, z, self.edges, g)

    def workspace_words(self) -> int:
        """Scratch words of one solve: flow, 7 node arrays and the heap."""
        m, n = self.sub.m, self.sub.n
        return m + 7 * n + 2 * (2 * m + n + 1)


class ExactOracle(_SymmetricOracle):
    """Exact solve of the symmetric problem with weights ``w_minus`` (alpha = 1)."""

    def __init__(self, g: ArcSystem):
        self.alpha = 1.0
        super().__init__(g, np.arange(g.m))


class SpannerOracle(_SymmetricOracle):
    """Exact solve on a spanner of ``(V, E, w_minus)``; alpha is its stretch."""

    def __init__(self, g: ArcSystem, spanner_edges, alpha: float):
        self.alpha = float(alpha)
        super().__init__(g, spanner_edges)


def approx_oracle(g: ArcSystem, q, oracle=None) -> OracleAnswer:
    """One oracle query; ``zero_demand`` is set when q vanishes."""
    return (oracle or ExactOracle(g))(q)
