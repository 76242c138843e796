"""Replays of the solver under broadcast congested clique and multipass streaming.

Both simulators run ``descent.descend`` with an engine that performs every
edge-dependent step the way the model allows and meters the cost:

* ``CliqueEngine``: every node evaluates its own incident arcs; values are
  exchanged in broadcast rounds of at most two words per node.
* ``StreamEngine``: edges are only readable inside a pass over a shuffled
  ``EdgeStream``; working memory is tracked by a ``SpaceMeter``.

The per-arc terms come from the same fixed-point kernel as the direct
solver, so the traces are bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .descent import SolveResult, arc_inf_norm, arc_max_stretch, descend
from .graph import ArcSystem
from .oracle import SpannerOracle
from .potential import NumericalError, accumulate_arcs, finalize_aggregate, fixed_point_bits
from .spanner import build_spanner, default_k

WORDS_PER_MESSAGE = 2


class OutOfPassAccess(RuntimeError):
    """An edge was read outside a declared pass."""


class SpaceBudgetExceeded(RuntimeError):
    pass


@dataclass
class GraphShape:
    """What every node (or the streaming machine) knows up front."""

    n: int
    m: int


# ---------------------------------------------------------------- clique


@dataclass
class RoundLog:
    label: str
    words: int  # largest message of a single node


class RoundMeter:
    def __init__(self, limit: int = WORDS_PER_MESSAGE):
        self.limit = limit
        self.log: list[RoundLog] = []

    def round(self, label: str, words: int):
        if words > self.limit:
            raise ValueError(f"round {label!r}: {words} words per node exceed {self.limit}")
        self.log.append(RoundLog(label, words))

    def rounds(self, prefix: str | None = None) -> int:
        if prefix is None:
            return len(self.log)
        return sum(1 for r in self.log if r.label.startswith(prefix))

    @property
    def max_words(self) -> int:
        return max((r.words for r in self.log), default=0)


@dataclass
class CliqueAccounting:
    rounds: int
    per_round_words: int
    setup_rounds: int
    spanner_rounds: int
    iterations: int
    rescales: int
    log: list[RoundLog] = field(default_factory=list, repr=False)

    def formula(self) -> int:
        return self.setup_rounds + self.spanner_rounds + 3 * self.iterations + self.rescales + 2


class CliqueEngine:
    """Each node v only touches the edges incident to v.

    Round A broadcasts ``(Sigma_v, local max stretch)``, round B the
    gradient entry, round C the local infinity-norm maximum.  The local
    maxima double as the shift for the next evaluation.
    """

    def __init__(self, g: ArcSystem, oracle, meter: RoundMeter):
        self.g = g
        self.oracle = oracle
        self.meter = meter
        self.n = g.n
        inc = [[] for _ in range(g.n)]
        for e, (t, h) in enumerate(zip(g.tail.tolist(), g.head.tolist())):
            inc[t].append(e)
            inc[h].append(e)
        self.incident = [np.array(x, dtype=np.int64) for x in inc]
        self._sig = np.zeros(g.n, dtype=np.int64)
        self._sigw = np.zeros(g.n, dtype=np.int64)
        self._lam = None

    def _local(self, v):
        return self.incident[v]

    @property
    def lam(self) -> float:
        return self._lam

    def max_stretch(self, pi) -> float:
        g = self.g
        pi = np.ascontiguousarray(pi, dtype=np.float64)
        local = np.empty(self.n)
        for v in range(self.n):
            local[v] = arc_max_stretch(self._local(v), g.tail, g.head, g.w_plus, g.w_minus, pi)
        if self._lam is None:
            # first evaluation also carries each node's largest weight ratio
            ratios = [float(np.max(g.w_plus[ix] / g.w_minus[ix])) if ix.size else 1.0
                      for ix in self.incident]
            self._lam = max(ratios)
            self.meter.round("fixed: lambda and initial stretch", 2)
        else:
            self.meter.round("fixed: final q-norm", 1)
        return float(np.max(local))

    def aggregate(self, beta, pi, shift):
        g = self.g
        pi = np.ascontiguousarray(pi, dtype=np.float64)
        bits = fixed_point_bits(g.m)
        scale = float(2.0 ** bits)
        sigma = np.zeros(self.n, dtype=np.int64)
        sigma_w = np.zeros(self.n, dtype=np.int64)
        top = -np.inf
        for v in range(self.n):
            self._sig[:] = 0
            self._sigw[:] = 0
            mx, overflow = accumulate_arcs(self._local(v), g.tail, g.head, g.w_plus, g.w_minus,
                                           pi, float(beta), float(shift), scale,
                                           self._sig, self._sigw)
            if overflow:
                raise NumericalError("arc term above the fixed-point budget; shift too small")
            sigma[v] = self._sig[v]
            sigma_w[v] = self._sigw[v]
            top = max(top, mx)
        self.meter.round("iteration: potential", 2)
        return finalize_aggregate(beta, shift, bits, sigma, sigma_w, top)

    def gradient(self, rep, pi):
        self.meter.round("iteration: gradient", 1)
        return rep.grad

    def direction(self, q):
        # the spanner is known to every node, so this is local work
        return self.oracle(q)

    def inf_norm(self, v) -> float:
        g = self.g
        v = np.ascontiguousarray(v, dtype=np.float64)
        top = 0.0
        for u in range(self.n):
            top = max(top, arc_inf_norm(self._local(u), g.tail, g.head, g.w_minus, v))
        self.meter.round("iteration: inf-norm", 1)
        return top


# ---------------------------------------------------------------- streaming


class SpaceMeter:
    """Named word counts; permanent slots persist, temporary ones come and go."""

    def __init__(self, budget: int | None = None):
        self.budget = budget
        self.permanent: dict[str, int] = {}
        self.temporary: dict[str, int] = {}
        self.peak_temporary = 0
        self.peak_total = 0

    def keep(self, name: str, words: int):
        self.permanent[name] = int(words)
        self._check()

    def hold(self, name: str, words: int):
        self.temporary[name] = int(words)
        self._check()

    def release(self, name: str):
        self.temporary.pop(name, None)

    def peak_temp(self, name: str, words: int):
        self.hold(name, words)
        self.release(name)

    @property
    def permanent_words(self) -> int:
        return sum(self.permanent.values())

    def _check(self):
        temp = sum(self.temporary.values())
        total = self.permanent_words + temp
        self.peak_temporary = max(self.peak_temporary, temp)
        self.peak_total = max(self.peak_total, total)
        if self.budget is not None and total > self.budget:
            raise SpaceBudgetExceeded(f"{total} words held, budget {self.budget}")


def space_budget(n: int, c: int = 16) -> int:
    return c * n * max(1, math.ceil(math.log2(max(n, 2))))


class EdgeStream:
    """Read-only edge stream; every pass sees a fresh shuffle of the edges.

    Edge data is handed out in chunk copies only while a pass is open;
    the underlying arrays are not reachable through the stream.
    """

    def __init__(self, g: ArcSystem, seed: int = 0, chunk: int | None = None,
                 meter: SpaceMeter | None = None):
        self._g = g
        self._rng = np.random.default_rng(seed)
        self.chunk = chunk or max(1, g.n)
        self.meter = meter
        self.labels: list[str] = []
        self._open = False

    @property
    def passes(self) -> int:
        return len(self.labels)

    def _chunks(self, label):
        if self._open:
            raise OutOfPassAccess(f"pass {label!r} opened inside another pass")
        g = self._g
        self._open = True
        self.labels.append(label)
        order = self._rng.permutation(g.m)
        if self.meter is not None:
            self.meter.hold("stream chunk", 4 * min(self.chunk, g.m))
        try:
            for lo in range(0, g.m, self.chunk):
                idx = order[lo:lo + self.chunk]
                yield idx, g.tail[idx], g.head[idx], g.w_plus[idx], g.w_minus[idx]
        finally:
            self._open = False
            if self.meter is not None:
                self.meter.release("stream chunk")

    def scan(self, label: str):
        """Chunks ``(edge id, tail, head, w_minus)``; used by the spanner."""
        for idx, t, h, _, wm in self._chunks(label):
            yield idx, t, h, wm

    def arcs(self, label: str):
        """Chunks ``(tail, head, w_plus, w_minus)`` indexed 0..len-1."""
        for _, t, h, wp, wm in self._chunks(label):
            yield t, h, wp, wm

    def __getattr__(self, name):
        if name in ("tail", "head", "w_plus", "w_minus"):
            raise OutOfPassAccess(f"direct access to {name!r} outside a pass")
        raise AttributeError(name)


@dataclass
class StreamAccounting:
    passes: int
    permanent_words: int
    peak_temporary_words: int
    iterations: int
    rescales: int
    spanner_passes: int
    budget: int
    fused: bool = True
    labels: list[str] = field(default_factory=list, repr=False)

    def formula(self) -> int:
        per = 2 if self.fused else 3
        return self.spanner_passes + per * self.iterations + self.rescales + 3


class StreamEngine:
    """Engine that reads edges only through ``EdgeStream`` passes."""

    def __init__(self, stream: EdgeStream, n: int, m: int, oracle, meter: SpaceMeter,
                 lam: float, fuse: bool = True):
        self.stream = stream
        self.n, self.m = n, m
        self.oracle = oracle
        self.meter = meter
        self.fuse = fuse
        self._lam = lam
        self._final = False
        self._ids = {}

    @property
    def lam(self) -> float:
        return self._lam

    def _range(self, size):
        idx = self._ids.get(size)
        if idx is None:
            idx = self._ids[size] = np.arange(size, dtype=np.int64)
        return idx

    def max_stretch(self, pi) -> float:
        pi = np.ascontiguousarray(pi, dtype=np.float64)
        label = "fixed: final q-norm" if self._final else "fixed: initial stretch"
        self._final = True
        top = -np.inf
        for t, h, wp, wm in self.stream.arcs(label):
            top = max(top, arc_max_stretch(self._range(t.size), t, h, wp, wm, pi))
        return float(top)

    def _sweep(self, label, beta, pi, shift, sig, sigw):
        top = -np.inf
        scale = float(2.0 ** fixed_point_bits(self.m))
        for t, h, wp, wm in self.stream.arcs(label):
            mx, overflow = accumulate_arcs(self._range(t.size), t, h, wp, wm, pi,
                                           float(beta), float(shift), scale, sig, sigw)
            if overflow:
                raise NumericalError("arc term above the fixed-point budget; shift too small")
            top = max(top, mx)
        return top

    def aggregate(self, beta, pi, shift):
        pi = np.ascontiguousarray(pi, dtype=np.float64)
        n = self.n
        sig = np.zeros(n, dtype=np.int64)
        sigw = np.zeros(n, dtype=np.int64)
        self.meter.hold("aggregate sums", 2 * n)
        top = self._sweep("iteration: potential", beta, pi, shift, sig, sigw)
        if not self.fuse:
            # keep only Sigma = sum_v sigma_v from this pass
            sigw[:] = 0
        rep = finalize_aggregate(beta, shift, fixed_point_bits(self.m), sig, sigw, top)
        self.meter.release("aggregate sums")
        self.meter.keep("phi and sigma", 2)
        return rep

    def gradient(self, rep, pi):
        if self.fuse:
            return rep.grad
        n = self.n
        sig = np.zeros(n, dtype=np.int64)
        sigw = np.zeros(n, dtype=np.int64)
        self.meter.hold("aggregate sums", 2 * n)
        self._sweep("iteration: gradient", rep.beta, np.ascontiguousarray(pi, dtype=np.float64),
                    rep.shift, sig, sigw)
        self.meter.release("aggregate sums")
        out = finalize_aggregate(rep.beta, rep.shift, rep.bits, sig, sigw, rep.max_stretch)
        return out.grad

    def direction(self, q):
        # gradient, projected gradient, h and P h are the iteration's n-vectors
        self.meter.hold("iteration vectors", 4 * self.n)
        self.meter.peak_temp("oracle workspace", self.oracle.workspace_words())
        return self.oracle(q)

    def inf_norm(self, v) -> float:
        v = np.ascontiguousarray(v, dtype=np.float64)
        top = 0.0
        for t, h, _, wm in self.stream.arcs("iteration: inf-norm"):
            top = max(top, arc_inf_norm(self._range(t.size), t, h, wm, v))
        self.meter.release("iteration vectors")
        return top


# ---------------------------------------------------------------- drivers


def _check_demand(g: ArcSystem, b):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (g.n,):
        raise ValueError(f"demand must have length {g.n}")
    if abs(float(b.sum())) > 1e-9 * max(1.0, float(np.abs(b).sum())):
        raise ValueError("demands must sum to zero")
    if not np.any(b != 0):
        raise ValueError("simulations need a nonzero demand")
    if g.m and float(g.w_minus.min()) <= 0:
        raise ValueError("weights must be positive; apply preprocess_weights first")
    return b


def simulate_clique(g: ArcSystem, b, eps: float, k: int | None = None, *,
                    max_iterations: int | None = None):
    """Solve in the broadcast congested clique; returns ``(SolveResult, CliqueAccounting)``."""
    b = _check_demand(g, b)
    meter = RoundMeter()
    # every node broadcasts its demand and degree
    meter.round("setup: demand and degree", 2)
    k = default_k(g.n) if k is None else k
    sp = build_spanner(g, k)
    for _ in range(sp.broadcast_rounds):
        meter.round("spanner", 2)
    oracle = SpannerOracle(g, sp.edges, sp.alpha)
    engine = CliqueEngine(g, oracle, meter)
    out, qf = descend(GraphShape(g.n, g.m), b, eps, engine, oracle.alpha, max_iterations)
    y = out.pi / qf
    res = SolveResult(y, float(b @ y), eps, out.beta, out.pi, out.trace,
                      alpha=oracle.alpha, phi0=out.phi0)
    acc = CliqueAccounting(len(meter.log), meter.max_words, meter.rounds("setup"),
                           meter.rounds("spanner"), res.oracle_calls, res.rescales,
                           list(meter.log))
    return res, acc


def _stats_pass(stream: EdgeStream, n: int):
    lam = 1.0
    m = 0
    wmin = math.inf
    for t, h, wp, wm in stream.arcs("fixed: stats"):
        m += t.size
        wmin = min(wmin, float(wm.min()))
        lam = max(lam, float(np.max(wp / wm)) if float(wm.min()) > 0 else math.inf)
    return m, lam, wmin


def simulate_stream(g: ArcSystem, b, eps: float, k: int | None = None, *,
                    shuffle_seed: int = 0, fuse_passes: bool = True,
                    budget_factor: int = 16, max_iterations: int | None = None):
    """Solve with multipass streaming access; returns ``(SolveResult, StreamAccounting)``."""
    b = _check_demand(g, b)
    n = g.n
    budget = space_budget(n, budget_factor)
    meter = SpaceMeter(budget)
    stream = EdgeStream(g, shuffle_seed, meter=meter)
    meter.keep("demand", n)
    meter.keep("potentials", n)
    m, lam, _ = _stats_pass(stream, n)
    meter.keep("scalars", 4)
    k = default_k(n) if k is None else k
    before = stream.passes
    sp = build_spanner(GraphShape(n, m), k, source=stream, meter=meter)
    spanner_passes = stream.passes - before
    # the stored spanner: one (tail, head, w_minus) record per edge
    t, h, w = sp.records
    sub = ArcSystem(n, t, h, w, w)
    meter.keep("spanner", 3 * sub.m)
    oracle = SpannerOracle(sub, np.arange(sub.m, dtype=np.int64), sp.alpha)
    meter.keep("spanner adjacency", n + 1 + 2 * sub.m)
    engine = StreamEngine(stream, n, m, oracle, meter, lam, fuse_passes)
    out, qf = descend(GraphShape(n, m), b, eps, engine, oracle.alpha, max_iterations)
    y = out.pi / qf
    res = SolveResult(y, float(b @ y), eps, out.beta, out.pi, out.trace,
                      alpha=oracle.alpha, phi0=out.phi0)
    acc = StreamAccounting(stream.passes, meter.permanent_words, meter.peak_temporary,
                           res.oracle_calls, res.rescales, spanner_passes, budget,
                           fuse_passes, list(stream.labels))
    return res, acc
