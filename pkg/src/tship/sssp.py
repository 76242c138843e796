"""(1+eps)-approximate single-source distances by repeated descent runs.

The demand ``1 - n 1_s`` sends one unit from s to every node.  After each
descent run the remaining nodes are tested, the ones that pass are fixed
at ``y_v - y_s`` and removed from the demand, and the loop repeats.

Two node tests are available.

``"delta"``: the projected-gradient test on the pair demand ``1_v - 1_s``
(``good_node_check``).  The soft-max gradient is shared by all v.  While
two or more sinks remain, that gradient carries demand at every sink, so
the test stays far above its threshold even at exact distances; the loop
then only ends through the round cap.

``"flow"`` (default): the primal flow recovered from the descent routes
the current demand.  After cancelling its cycles, the average cost A_v of
the unit delivered to v is the cost of a mix of s-v paths, so
``A_v >= dist(s, v)``.  Node v is fixed once ``(1+eps) y_v >= A_v``.  Since
``sum_v (A_v - y_v) <= eps' b^T y``, nodes failing the test carry at most
``(1+eps) eps'/eps`` of ``b^T y*``, which is 3/8 for the default
``eps' = eps/4``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .descent import (ConvergenceError, DescentConfig, LocalEngine, gradient_transshipment,
                      initial_beta, make_oracle, recover_primal, symmetrized_start)
from .graph import ArcSystem, edge_flow_to_arcs, net_flow, sssp_demand
from .potential import aggregate

CHECKS = ("flow", "delta")

NORM_GUARD = 1e-12


@dataclass
class NodeCheck:
    node: int
    good: bool
    delta: float
    degenerate: bool = False  # y_v == y_s, projection undefined
    path_cost: float | None = None  # flow test only


@dataclass
class SsspRound:
    index: int
    remaining_before: list[int]
    fixed: list[int]
    descent_calls: int
    beta: float
    reentry_rescaled: bool
    checks: list[NodeCheck] = field(default_factory=list)


@dataclass
class SsspResult:
    distances: np.ndarray
    source: int
    eps: float
    inner_eps: float
    rounds: list[SsspRound]
    round_cap: int
    alpha: float = 1.0
    check: str = "flow"

    @property
    def descent_calls(self) -> int:
        return sum(r.descent_calls for r in self.rounds)


def literal_inner_eps(eps: float, alpha: float, m: int) -> float:
    """Inner precision ``eps^3 / (640 alpha^2 ln 2m)`` of the outer loop."""
    return eps ** 3 / (640 * alpha ** 2 * math.log(2 * max(m, 1)))


def round_cap(g: ArcSystem) -> int:
    """``4 log_{4/3}(n^2 ||w||_inf / w_min)``; equals the usual bound for weights >= 1."""
    if g.m == 0:
        return 1
    wmin = float(g.w_minus.min())
    ratio = g.n ** 2 * g.max_weight / min(1.0, wmin)
    return max(1, math.ceil(4 * math.log(max(ratio, 4 / 3)) / math.log(4 / 3)))


def good_node_check(g: ArcSystem, y, beta: float, s: int, v: int, oracle, threshold: float,
                    grad=None) -> NodeCheck:
    """Test node v on the pair demand ``1_v - 1_s`` at the potentials y.

    ``grad`` is ``grad Phi_beta(y)``; it is computed when missing.  The
    projection uses ``y / (y_v - y_s)``, which is normalised for the pair
    demand, and the same gradient serves every v.
    """
    y = np.asarray(y, dtype=np.float64)
    gap = float(y[v] - y[s])
    if not gap > 0:
        return NodeCheck(v, False, math.inf, degenerate=True)
    if grad is None:
        grad = aggregate(g, beta, y).grad
    pi_v = y / gap
    c = float(pi_v @ grad)
    bt = np.array(grad, dtype=np.float64)
    bt[v] -= c
    bt[s] += c
    if not np.any(bt != 0):
        return NodeCheck(v, True, 0.0)
    h = oracle(bt).raw
    num = float(bt @ h)
    ph = h - pi_v * (h[v] - h[s])
    denom = float(np.max(np.abs(ph[g.head] - ph[g.tail]) / g.w_minus))
    if denom <= NORM_GUARD * float(np.max(np.abs(h[g.head] - h[g.tail]) / g.w_minus)):
        return NodeCheck(v, True, 0.0)
    delta = num / denom
    return NodeCheck(v, delta <= threshold, delta)


def _cancel_cycles(g: ArcSystem, z: np.ndarray) -> np.ndarray:
    """Remove directed cycles from the support of the edge flow z."""
    z = z.copy()
    n = g.n
    while True:
        out = [[] for _ in range(n)]
        for e in np.nonzero(z)[0].tolist():
            u, v = (g.tail[e], g.head[e]) if z[e] > 0 else (g.head[e], g.tail[e])
            out[u].append((v, e))
        state = [0] * n
        parent = [None] * n
        cycle = None
        for root in range(n):
            if state[root]:
                continue
            stack = [(root, iter(out[root]))]
            state[root] = 1
            while stack and cycle is None:
                u, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[u] = 2
                    stack.pop()
                    continue
                v, e = nxt
                if state[v] == 0:
                    state[v] = 1
                    parent[v] = (u, e)
                    stack.append((v, iter(out[v])))
                elif state[v] == 1:
                    cycle = [e]
                    w = u
                    while w != v:
                        w, pe = parent[w]
                        cycle.append(pe)
            if cycle is not None:
                break
        if cycle is None:
            return z
        amount = min(abs(z[e]) for e in cycle)
        for e in cycle:
            z[e] -= np.sign(z[e]) * amount
            if abs(z[e]) <= 1e-15 * amount:
                z[e] = 0.0


def delivered_costs(g: ArcSystem, s: int, z: np.ndarray) -> np.ndarray:
    """Average cost per unit of flow reaching each node of an acyclic flow from s.

    Every unit reaching v travelled along some s-v path, so the result is
    at least the distance from s (``nan`` where no flow arrives).
    """
    z = _cancel_cycles(g, np.asarray(z, dtype=np.float64))
    n = g.n
    keep = np.nonzero(z)[0]
    fwd = z[keep] > 0
    src = np.where(fwd, g.tail[keep], g.head[keep])
    dst = np.where(fwd, g.head[keep], g.tail[keep])
    amt = np.abs(z[keep])
    cost = np.where(fwd, g.w_plus[keep], g.w_minus[keep])
    indeg = np.bincount(dst, minlength=n)
    out = [[] for _ in range(n)]
    for j in range(keep.size):
        out[src[j]].append(j)
    order = [v for v in range(n) if indeg[v] == 0]
    for u in order:
        for j in out[u]:
            indeg[dst[j]] -= 1
            if indeg[dst[j]] == 0:
                order.append(dst[j])
    inflow = np.zeros(n)
    spent = np.zeros(n)
    avg = np.full(n, np.nan)
    avg[s] = 0.0
    for u in order:
        if u != s:
            avg[u] = spent[u] / inflow[u] if inflow[u] > 0 else np.nan
        if np.isnan(avg[u]):
            continue
        for j in out[u]:
            v = dst[j]
            inflow[v] += amt[j]
            spent[v] += amt[j] * (avg[u] + cost[j])
    return avg


def single_source_shortest_path(g: ArcSystem, s: int, eps: float, oracle=None, *,
                                check: str = "flow",
                                inner_eps: float | None = None,
                                max_iterations: int | None = None,
                                max_rounds: int | None = None) -> SsspResult:
    """Distances ``yhat`` with ``y*_v / (1+eps) <= yhat_v <= y*_v`` for all v.

    ``check`` selects the node test (see the module docstring).
    ``inner_eps`` is the precision of each descent run; the default is
    ``eps / 4`` for the flow test and ``eps^3 / (640 alpha^2 ln 2m)`` for the
    delta test.
    """
    if check not in CHECKS:
        raise ValueError(f"unknown node test {check!r}")
    n = g.n
    if not 0 <= s < n:
        raise ValueError(f"source {s} out of range")
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    yhat = np.zeros(n)
    if n == 1:
        return SsspResult(yhat, s, eps, inner_eps or eps, [], 0, 1.0, check)
    oracle = oracle or make_oracle(g)
    alpha = float(oracle.alpha)
    if inner_eps is None:
        inner_eps = eps / 4 if check == "flow" else literal_inner_eps(eps, alpha, g.m)
    cap = max_rounds or round_cap(g)
    threshold = eps / (8 * alpha * g.lam ** 2)
    cfg = DescentConfig(min(inner_eps, 0.5), alpha, float(g.lam), g.m, max_iterations)
    engine = LocalEngine(g, oracle)

    b = sssp_demand(n, s)
    pi0 = symmetrized_start(g, b, oracle)
    m0 = engine.max_stretch(pi0)
    y = pi0 / m0
    beta = initial_beta(g, eps, 1.0)
    rounds: list[SsspRound] = []
    remaining = [v for v in range(n) if v != s]
    while b[s] < 0:
        if len(rounds) >= cap:
            raise ConvergenceError(f"sssp exceeded {cap} outer rounds", rounds)
        y = y - y[s]
        by = float(b @ y)
        out = gradient_transshipment(g, b, y / by, beta * by, cfg, engine=engine,
                                     revalidate=True)
        qf = engine.max_stretch(out.pi)
        y = out.pi / qf
        beta = out.beta * qf
        y = y - y[s]
        # grad Phi_beta(pi) equals grad Phi_{beta q}(pi / q)
        grad = out.report.grad
        rnd = SsspRound(len(rounds), list(remaining), [], len(out.trace), beta,
                        out.rederived)
        if check == "flow":
            x2 = (edge_flow_to_arcs(out.answer.flow) if out.answer is not None
                  else np.zeros(2 * g.m))
            x = recover_primal(g, b, out.pi, out.beta, x2, out.report)
            avg = delivered_costs(g, s, net_flow(g, x))
        for v in remaining:
            if check == "flow":
                ok = bool(np.isfinite(avg[v]) and (1 + eps) * y[v] >= avg[v] * (1 + 1e-9))
                chk = NodeCheck(v, ok, math.nan, path_cost=float(avg[v]))
            else:
                chk = good_node_check(g, y, beta, s, v, oracle, threshold, grad=grad)
            rnd.checks.append(chk)
            if chk.good:
                rnd.fixed.append(v)
        for v in rnd.fixed:
            b[v] = 0.0
            yhat[v] = y[v] - y[s]
            b[s] += 1.0
        remaining = [v for v in remaining if v not in set(rnd.fixed)]
        rounds.append(rnd)
    return SsspResult(yhat, s, eps, inner_eps, rounds, cap, alpha, check)
