"""Projected soft-max gradient descent for the asymmetric transshipment dual.

The loop keeps ``b^T pi = 1`` and minimises ``Phi_beta(pi)``; the dual
solution is ``f(pi) = pi / q(R_* A^T pi)``.  Every quantity that would need
communication in a distributed setting goes through an *engine* (see
``LocalEngine``), so the simulated models in ``tship.models`` replay exactly
the same arithmetic while counting rounds or passes.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from numba import njit

from .graph import (ArcSystem, edge_cost, edge_flow_to_arcs, incidence_apply, net_flow,
                    primal_cost)
from .oracle import ExactOracle, OracleAnswer, SpannerOracle
from .potential import (AggregateReport, DegeneratePotentialError, NumericalError,
                        aggregate, in_beta_window, soft_flow)
from .spanner import build_spanner, default_k


class ConvergenceError(RuntimeError):
    """The descent exceeded its iteration cap or lost numerical footing."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class TreeSamplingError(RuntimeError):
    pass


DENOM_GUARD = 1e-12


@dataclass
class DescentConfig:
    eps: float
    alpha: float = 1.0
    lam: float = 1.0
    m: int = 1
    max_iterations: int | None = None

    def __post_init__(self):
        if not 0 < self.eps <= 0.5:
            raise ValueError("eps must lie in (0, 1/2]")
        if self.max_iterations is None:
            env = os.environ.get("TSHIP_MAX_ITERS")
            self.max_iterations = int(env) if env else 4 * self.analytic_bound()

    @property
    def tau(self) -> float:
        """Termination threshold ``eps / (8 alpha lam^2)``."""
        return self.eps / (8 * self.alpha * self.lam ** 2)

    def analytic_bound(self) -> int:
        a, lam, eps = self.alpha, self.lam, self.eps
        val = (640 * a * a * lam ** 4 * math.log(2 * max(self.m, 1))
               * (eps ** -3 + math.log(lam) + math.log(a)))
        return int(math.ceil(val))

    @classmethod
    def for_instance(cls, g: ArcSystem, eps: float, alpha: float = 1.0,
                     max_iterations: int | None = None) -> "DescentConfig":
        return cls(eps, float(alpha), float(g.lam), g.m, max_iterations)


@dataclass
class IterationRecord:
    index: int
    beta: float
    potential: float
    delta: float
    dual_value: float
    rescale_count: int
    phi_after: float | None = None
    accepted: bool = False

    def decrement_bound(self, eps: float, m: int) -> float:
        """Largest potential allowed after an accepted step."""
        return (1 - eps * self.delta ** 2 / (20 * math.log(2 * m))) * self.potential


@dataclass
class SolveResult:
    y: np.ndarray
    value_dual: float
    eps: float
    beta_final: float
    pi: np.ndarray
    trace: list[IterationRecord]
    x: np.ndarray | None = None
    value_primal: float | None = None
    primal_tree: list[tuple[int, int]] | None = None
    tree_cost: float | None = None
    alpha: float = 1.0
    phi0: float | None = None

    @property
    def iterations(self) -> int:
        """Accepted descent steps."""
        return sum(1 for r in self.trace if r.accepted)

    @property
    def oracle_calls(self) -> int:
        return len(self.trace)

    @property
    def rescales(self) -> int:
        return sum(r.rescale_count for r in self.trace)


@njit(cache=True)
def _projected_gradient(pi, grad, b):
    """``c = pi^T grad`` and ``btilde = grad - b c``; flags an all-zero btilde."""
    c = 0.0
    for v in range(pi.size):
        c += pi[v] * grad[v]
    bt = np.empty(pi.size)
    nonzero = False
    for v in range(pi.size):
        bt[v] = grad[v] - b[v] * c
        if bt[v] != 0.0:
            nonzero = True
    return c, bt, nonzero


@njit(cache=True)
def _projected_direction(pi, b, h, bt):
    """``P h`` and the numerator ``btilde^T h``."""
    bh = 0.0
    num = 0.0
    for v in range(pi.size):
        bh += b[v] * h[v]
        num += bt[v] * h[v]
    ph = np.empty(pi.size)
    for v in range(pi.size):
        ph[v] = h[v] - pi[v] * bh
    return ph, num


@njit(cache=True)
def _step(pi, ph, t):
    out = np.empty(pi.size)
    for v in range(pi.size):
        out[v] = pi[v] - t * ph[v]
    return out


@njit(cache=True)
def arc_inf_norm(idx, tail, head, wm, v):
    """``max |stretch|`` of v over the edges idx; the backward arc dominates."""
    top = 0.0
    for j in range(idx.size):
        e = idx[j]
        d = abs(v[head[e]] - v[tail[e]]) / wm[e]
        if d > top:
            top = d
    return top


@njit(cache=True)
def arc_max_stretch(idx, tail, head, wp, wm, v):
    top = -np.inf
    for j in range(idx.size):
        e = idx[j]
        d = v[head[e]] - v[tail[e]]
        a = d / wp[e]
        bk = -d / wm[e]
        if a > top:
            top = a
        if bk > top:
            top = bk
    return top


class LocalEngine:
    """Evaluates the distributed primitives directly on the edge list."""

    def __init__(self, g: ArcSystem, oracle):
        self.g = g
        self.oracle = oracle
        self._idx = np.arange(g.m, dtype=np.int64)

    def max_stretch(self, pi) -> float:
        g = self.g
        return arc_max_stretch(self._idx, g.tail, g.head, g.w_plus, g.w_minus,
                               np.ascontiguousarray(pi, dtype=np.float64))

    def aggregate(self, beta, pi, shift) -> AggregateReport:
        return aggregate(self.g, beta, pi, shift)

    def gradient(self, rep: AggregateReport, pi) -> np.ndarray:
        return rep.grad

    def direction(self, q) -> OracleAnswer:
        return self.oracle(q)

    def inf_norm(self, v) -> float:
        g = self.g
        return arc_inf_norm(self._idx, g.tail, g.head, g.w_minus, v)

    @property
    def lam(self) -> float:
        return float(self.g.lam)


def project(pi, b, h) -> np.ndarray:
    """``P h = h - pi (b^T h)`` for ``P = I - pi b^T``."""
    pi, b, h = (np.asarray(a, dtype=np.float64) for a in (pi, b, h))
    return h - pi * float(b @ h)


@dataclass
class DescentOutcome:
    pi: np.ndarray
    beta: float
    trace: list[IterationRecord]
    report: AggregateReport
    btilde: np.ndarray
    answer: OracleAnswer | None
    phi0: float
    rederived: bool = False


def initial_beta(g: ArcSystem, eps: float, max_stretch: float) -> float:
    """Closed-form start inside the window (see ``find_initial_beta``)."""
    if not max_stretch > 0:
        raise DegeneratePotentialError("potential is constant; no positive stretch")
    return (4.5 - eps / 2) * math.log(2 * g.m) / (eps * max_stretch)


def gradient_transshipment(g: ArcSystem, b, pi0, beta0: float, cfg: DescentConfig,
                           oracle=None, engine=None, max_stretch0: float | None = None,
                           revalidate: bool = False) -> DescentOutcome:
    """Run the descent from ``(pi0, beta0)`` until ``delta <= cfg.tau``.

    With ``revalidate`` the starting beta is re-derived when it lies outside
    the initialisation window for ``cfg.eps``.
    """
    b = np.asarray(b, dtype=np.float64)
    pi = np.array(pi0, dtype=np.float64)
    if abs(float(b @ pi) - 1) > 1e-9:
        raise ValueError("descent needs b^T pi0 = 1")
    engine = engine or LocalEngine(g, oracle)
    eps = cfg.eps
    log4m = math.log(4 * g.m)
    if max_stretch0 is None:
        max_stretch0 = engine.max_stretch(pi)
    beta = float(beta0)
    rep = engine.aggregate(beta, pi, beta * max_stretch0)
    rederived = revalidate and not in_beta_window(g, eps, beta, rep.phi)
    if rederived:
        beta = initial_beta(g, eps, rep.max_stretch)
        rep = engine.aggregate(beta, pi, beta * rep.max_stretch)
    phi0 = rep.phi
    trace: list[IterationRecord] = []
    btil = np.zeros(g.n)
    answer = None
    while True:
        rescales = 0
        while 4 * log4m / (eps * beta) >= rep.phi:
            beta *= 1.25
            rep = engine.aggregate(beta, pi, beta * rep.max_stretch)
            rescales += 1
        grad = engine.gradient(rep, pi)
        c, btil, nonzero = _projected_gradient(pi, grad, b)
        # convexity inside the window: pi^T grad >= (1 - eps/4) Phi
        if c < (1 - eps / 4) * rep.phi - 1e-9 * abs(rep.phi):
            raise NumericalError(f"pi^T grad = {c:.6g} below (1 - eps/4) Phi = "
                                 f"{(1 - eps / 4) * rep.phi:.6g}")
        q = max(0.0, rep.max_stretch)
        dual_value = 1.0 / q if q > 0 else math.inf
        rec = IterationRecord(len(trace), beta, rep.phi, 0.0, dual_value, rescales)
        trace.append(rec)
        if not nonzero:
            answer = None
            break
        answer = engine.direction(btil)
        ph, num = _projected_direction(pi, b, answer.raw, btil)
        denom = engine.inf_norm(ph)
        if denom < DENOM_GUARD * q or denom == 0:
            break
        delta = num / denom
        rec.delta = delta
        if delta <= cfg.tau:
            break
        if len(trace) > cfg.max_iterations:
            raise ConvergenceError(
                f"descent exceeded {cfg.max_iterations} iterations", trace)
        pi = _step(pi, ph, delta / (2 * beta * denom))
        rep = engine.aggregate(beta, pi, beta * rep.max_stretch)
        rec.phi_after = rep.phi
        rec.accepted = True
    return DescentOutcome(pi, beta, trace, rep, btil, answer, phi0, rederived)


def symmetrized_start(g: ArcSystem, b, oracle) -> np.ndarray:
    """Oracle solution of the problem with both directions priced at w_minus.

    Normalised to ``b^T pi = 1``; its stretch is within ``alpha*lambda`` of
    the optimum of the asymmetric problem.
    """
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b != 0):
        raise ValueError("symmetrized_start needs a nonzero demand")
    ans = oracle(b)
    val = float(b @ ans.raw)
    if not val > 0:
        raise NumericalError("oracle returned a non-improving direction for b")
    return ans.raw / val


def recover_primal(g: ArcSystem, b, pi, beta: float, x2, grad_report: AggregateReport) -> np.ndarray:
    """Arc flow ``(x1 - x2) / (pi^T grad)`` with x1 the soft flow at (beta, pi).

    ``x2`` is an arc flow routing the projected gradient demand.
    """
    c = float(np.asarray(pi) @ grad_report.grad)
    if c < 1e-12:
        raise NumericalError("pi^T grad Phi is not positive; cannot recover a flow")
    x1 = soft_flow(g, beta, pi)
    return (x1 - np.asarray(x2, dtype=np.float64)) / c


@dataclass
class TreeSample:
    edges: list[int]
    flow: np.ndarray  # signed per-edge flow on the sampled forest
    cost: float
    attempts: int


def _dag(g: ArcSystem, x1):
    z = net_flow(g, x1)
    src = np.where(z > 0, g.tail, g.head)
    dst = np.where(z > 0, g.head, g.tail)
    amt = np.abs(z)
    keep = np.nonzero(amt > 0)[0]
    indeg = np.bincount(dst[keep], minlength=g.n)
    out = [[] for _ in range(g.n)]
    inc = [[] for _ in range(g.n)]
    for e in keep.tolist():
        out[src[e]].append(e)
        inc[dst[e]].append(e)
    order = [v for v in range(g.n) if indeg[v] == 0]
    deg = indeg.copy()
    for u in order:
        for e in out[u]:
            v = dst[e]
            deg[v] -= 1
            if deg[v] == 0:
                order.append(v)
    if len(order) != g.n:
        raise TreeSamplingError("support of x1 contains a directed cycle")
    return z, src, dst, amt, inc, order


def sample_forest(g: ArcSystem, x1, rng: np.random.Generator, dag=None) -> TreeSample:
    """Each node keeps one incoming arc with probability proportional to x1.

    The arc into v carries v's subtree demand, so the forest flow meets the
    demand of x1 at every non-root node.  When the support of x1 has several
    sources the result has several trees, and each root is left with the
    imbalance of its tree.
    """
    z, src, dst, amt, inc, order = dag or _dag(g, x1)
    demand = incidence_apply(g, x1)
    parent_edge = np.full(g.n, -1, dtype=np.int64)
    for v in range(g.n):
        if inc[v]:
            cand = np.array(inc[v])
            p = amt[cand] / amt[cand].sum()
            parent_edge[v] = cand[rng.choice(cand.size, p=p)]
    sub = demand.copy()
    flow = np.zeros(g.m)
    for v in reversed(order):
        e = parent_edge[v]
        if e < 0:
            continue
        # positive amounts follow the DAG orientation src -> dst
        f = sub[v]
        flow[e] = f if src[e] == g.tail[e] else -f
        sub[src[e]] += f
    edges = sorted(int(e) for e in parent_edge if e >= 0)
    return TreeSample(edges, flow, edge_cost(g, flow), 1)


def sample_tree(g: ArcSystem, x1, eps: float, seed: int) -> TreeSample:
    """Draw forests until the routed cost is at most ``1 + eps/8``.

    At most ``ceil(48 ln n / eps)`` attempts; each attempt uses its own
    child stream of a counter-based generator seeded with ``seed``.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    dag = _dag(g, x1)
    if not np.any(dag[3] > 0):
        return TreeSample([], np.zeros(g.m), 0.0, 0)
    budget = max(1, math.ceil(48 * math.log(max(g.n, 2)) / eps))
    children = np.random.SeedSequence(seed).spawn(budget)
    for i, child in enumerate(children, start=1):
        rng = np.random.Generator(np.random.Philox(child))
        s = sample_forest(g, x1, rng, dag)
        if s.cost <= 1 + eps / 8:
            s.attempts = i
            return s
    raise TreeSamplingError(f"no forest within cost bound after {budget} attempts")


def make_oracle(g: ArcSystem, kind: str = "spanner", k: int | None = None):
    """``ExactOracle`` or a ``SpannerOracle`` built with parameter k."""
    if kind == "exact":
        return ExactOracle(g)
    if kind != "spanner":
        raise ValueError(f"unknown oracle kind {kind!r}")
    k = default_k(g.n) if k is None else k
    sp = build_spanner(g, k)
    return SpannerOracle(g, sp.edges, sp.alpha)


def descend(g, b, eps: float, engine, alpha: float, max_iterations: int | None = None):
    """Symmetrized start, initial beta, descent and the final q-norm.

    Only ``g.n`` and ``g.m`` are read from g; everything touching edges goes
    through the engine.  Returns ``(DescentOutcome, q(R_* A^T pi))``.
    """
    pi0 = symmetrized_start(g, b, engine.direction)
    m0 = engine.max_stretch(pi0)
    cfg = DescentConfig(eps, float(alpha), engine.lam, g.m, max_iterations)
    beta0 = initial_beta(g, eps, m0)
    out = gradient_transshipment(g, b, pi0, beta0, cfg, engine=engine, max_stretch0=m0)
    qf = engine.max_stretch(out.pi)
    if not qf > 0:
        raise NumericalError("final potential has no positive stretch")
    return out, qf


def solve(g: ArcSystem, b, eps: float, *, oracle=None, primal: bool = False,
          tree: bool = False, seed: int = 0, engine=None,
          max_iterations: int | None = None) -> SolveResult:
    """(1+eps)-approximate transshipment: dual y and optionally a primal flow."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (g.n,):
        raise ValueError(f"demand must have length {g.n}")
    if abs(float(b.sum())) > 1e-9 * max(1.0, float(np.abs(b).sum())):
        raise ValueError("demands must sum to zero")
    if g.m and float(g.w_minus.min()) <= 0:
        raise ValueError("weights must be positive; apply preprocess_weights first")
    oracle = oracle or make_oracle(g)
    DescentConfig.for_instance(g, eps, oracle.alpha, max_iterations)  # validates eps
    if not np.any(b != 0):
        zero = np.zeros(g.n)
        return SolveResult(zero, 0.0, eps, 0.0, zero, [],
                           x=np.zeros(2 * g.m) if primal else None,
                           value_primal=0.0 if primal else None,
                           primal_tree=[] if tree else None, alpha=oracle.alpha)
    engine = engine or LocalEngine(g, oracle)
    out, qf = descend(g, b, eps, engine, oracle.alpha, max_iterations)
    y = out.pi / qf
    res = SolveResult(y, float(b @ y), eps, out.beta, out.pi, out.trace,
                      alpha=oracle.alpha, phi0=out.phi0)
    if primal or tree:
        x2 = (edge_flow_to_arcs(out.answer.flow) if out.answer is not None
              else np.zeros(2 * g.m))
        x = recover_primal(g, b, out.pi, out.beta, x2, out.report)
        if primal:
            res.x = x
            res.value_primal = primal_cost(g, x)
        if tree:
            x1 = soft_flow(g, out.beta, out.pi)
            s = sample_tree(g, x1, eps, seed)
            res.primal_tree = [(int(g.tail[e]), int(g.head[e])) for e in s.edges]
            res.tree_cost = s.cost
    return res
