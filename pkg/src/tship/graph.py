"""Graph core: oriented arc systems, incidence products and instance I/O.

Every undirected edge {u, v} carries two traversal costs.  Internally an edge is
stored once as an oriented pair (tail, head) such that the *forward* cost
``w_plus`` (tail -> head) is at least the *backward* cost ``w_minus``
(head -> tail).  Ties are oriented from the smaller to the larger node id.

Arc vectors have length 2m: the forward block (one entry per edge) followed by
the backward block.  A flow vector uses the same layout and describes a
non-negative amount on each arc; the net edge flow is ``x_fwd - x_bwd``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InstanceFormatError(ValueError):
    """Raised for malformed instance files or invalid graph data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ArcSystem:
    """Oriented edge list with forward/backward weights.

    Attributes are numpy arrays of length m; node ids are 0-based.
    """

    n: int
    tail: np.ndarray
    head: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    lam: float = field(init=False)

    def __post_init__(self):
        tail = np.ascontiguousarray(self.tail, dtype=np.int64)
        head = np.ascontiguousarray(self.head, dtype=np.int64)
        wp = np.ascontiguousarray(self.w_plus, dtype=np.float64)
        wm = np.ascontiguousarray(self.w_minus, dtype=np.float64)
        if not (tail.shape == head.shape == wp.shape == wm.shape) or tail.ndim != 1:
            raise InstanceFormatError("edge arrays must be 1-d and of equal length")
        if self.n < 1:
            raise InstanceFormatError("graph needs at least one node")
        if tail.size and (tail.min() < 0 or head.min() < 0 or
                          tail.max() >= self.n or head.max() >= self.n):
            raise InstanceFormatError("edge endpoint out of range")
        if np.any(tail == head):
            raise InstanceFormatError("self-loops are not allowed")
        if np.any(wm < 0) or np.any(~np.isfinite(wp)) or np.any(~np.isfinite(wm)):
            raise InstanceFormatError("weights must be finite and non-negative")
        if np.any(wp < wm):
            raise InstanceFormatError("arcs must be oriented so that w_plus >= w_minus")
        for name, arr in (("tail", tail), ("head", head), ("w_plus", wp), ("w_minus", wm)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if wm.size and wm.min() > 0:
            lam = float(np.max(wp / wm))
        else:
            lam = 1.0 if wm.size == 0 else math.inf
        object.__setattr__(self, "lam", lam)

    @property
    def m(self) -> int:
        return int(self.tail.size)

    @property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self.w_plus, self.w_minus))

    @property
    def max_weight(self) -> float:
        return float(self.w_plus.max()) if self.m else 0.0

    def symmetrized(self) -> "ArcSystem":
        """Same topology with both directions priced at ``w_minus``."""
        return ArcSystem(self.n, self.tail, self.head, self.w_minus, self.w_minus)

    def subgraph(self, edges) -> "ArcSystem":
        """Keep only the listed edge indices (node set unchanged)."""
        idx = np.asarray(edges, dtype=np.int64)
        return ArcSystem(self.n, self.tail[idx], self.head[idx],
                         self.w_plus[idx], self.w_minus[idx])

    def degrees(self) -> np.ndarray:
        return np.bincount(self.tail, minlength=self.n) + np.bincount(self.head, minlength=self.n)

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        adj = coo_matrix((np.ones(self.m), (self.tail, self.head)), shape=(self.n, self.n))
        k, _ = connected_components(adj, directed=False)
        return k == 1


def make_arc_system(n: int, edges, *, check_connected: bool = True) -> ArcSystem:
    """Build an ArcSystem from ``(u, v, w_uv[, w_vu])`` tuples (0-based ids).

    ``w_uv`` prices u -> v and ``w_vu`` prices v -> u (defaults to ``w_uv``).
    """
    tail, head, wp, wm = [], [], [], []
    for e in edges:
        if len(e) == 3:
            u, v, a = e
            b = a
        else:
            u, v, a, b = e
        u, v = int(u), int(v)
        if a < 0 or b < 0:
            raise InstanceFormatError(f"negative weight on edge ({u}, {v})")
        # orient so that the forward cost is the larger one
        if a > b or (a == b and u < v):
            tail.append(u); head.append(v); wp.append(a); wm.append(b)
        else:
            tail.append(v); head.append(u); wp.append(b); wm.append(a)
    g = ArcSystem(n, np.array(tail, dtype=np.int64), np.array(head, dtype=np.int64),
                  np.array(wp, dtype=np.float64), np.array(wm, dtype=np.float64))
    if check_connected and not g.is_connected():
        raise InstanceFormatError("graph is not connected")
    return g


def incidence_apply_transpose(g: ArcSystem, y: np.ndarray) -> np.ndarray:
    """Stretches ``R_* A^T y``: forward block first, then backward block."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (g.n,):
        raise ValueError(f"potential vector must have length {g.n}")
    d = y[g.head] - y[g.tail]
    return np.concatenate((d / g.w_plus, -d / g.w_minus))


def net_flow(g: ArcSystem, x: np.ndarray) -> np.ndarray:
    """Collapse a 2m arc flow into a signed per-edge flow along (tail, head)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2 * g.m,):
        raise ValueError(f"flow vector must have length {2 * g.m}")
    return x[: g.m] - x[g.m:]


def incidence_apply(g: ArcSystem, x: np.ndarray) -> np.ndarray:
    """Net inflow per node of an arc flow (backward arcs run head -> tail)."""
    z = net_flow(g, x)
    return (np.bincount(g.head, weights=z, minlength=g.n)
            - np.bincount(g.tail, weights=z, minlength=g.n))


def edge_flow_to_arcs(z: np.ndarray) -> np.ndarray:
    """Split a signed per-edge flow into the 2m non-negative arc layout."""
    z = np.asarray(z, dtype=np.float64)
    return np.concatenate((np.maximum(z, 0.0), np.maximum(-z, 0.0)))


def primal_cost(g: ArcSystem, x: np.ndarray) -> float:
    """``p(W_* z)`` for the net edge flow z of the arc flow x."""
    z = net_flow(g, x)
    return float(np.sum(np.where(z > 0, g.w_plus * z, -g.w_minus * z)))


def edge_cost(g: ArcSystem, z: np.ndarray) -> float:
    """Cost of a signed per-edge flow z."""
    z = np.asarray(z, dtype=np.float64)
    return float(np.sum(np.where(z > 0, g.w_plus * z, -g.w_minus * z)))


def preprocess_weights(g: ArcSystem, eps: float) -> ArcSystem:
    """Replace every weight w by ``1 + ceil(n/eps) * w``.

    Afterwards all weights are at least one; optimal solutions of the scaled
    instance are (1+eps)-approximate for the original one.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    for arr in (g.w_plus, g.w_minus):
        if np.any(arr != np.round(arr)):
            raise InstanceFormatError("preprocessing expects integer weights")
    c = math.ceil(g.n / eps)
    return ArcSystem(g.n, g.tail, g.head, 1.0 + c * g.w_plus, 1.0 + c * g.w_minus)


def sssp_demand(n: int, s: int) -> np.ndarray:
    """Demand ``1 - n * 1_s``: every node receives one unit sent from s (0-based)."""
    if not 0 <= s < n:
        raise ValueError(f"source {s} outside [0, {n})")
    b = np.ones(n)
    b[s] -= n
    return b


def is_trivial_demand(b: np.ndarray) -> bool:
    return not np.any(np.asarray(b) != 0)


@dataclass
class Instance:
    """A transshipment instance: graph, demand and the header comments."""

    graph: ArcSystem
    demand: np.ndarray
    comments: list[str] = field(default_factory=list)


def _num(tok: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise InstanceFormatError(f"not a number: {tok!r}", line) from None
    if not math.isfinite(v):
        raise InstanceFormatError(f"non-finite value {tok!r}", line)
    return v


def _int(tok: str, line: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise InstanceFormatError(f"not an integer: {tok!r}", line) from None


def parse_instance(text: str, *, require_demand: bool = True) -> Instance:
    """Parse the line-based instance format (1-based node ids in the file)."""
    n = m = None
    demand = None
    edges = []
    comments = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split()
        if not toks:
            continue
        tag = toks[0]
        if tag == "c":
            comments.append(raw[1:].strip())
        elif tag == "p":
            if n is not None:
                raise InstanceFormatError("duplicate problem line", lineno)
            if len(toks) != 4 or toks[1] != "tship":
                raise InstanceFormatError("expected 'p tship <n> <m>'", lineno)
            n, m = _int(toks[2], lineno), _int(toks[3], lineno)
            if n < 1 or m < 0:
                raise InstanceFormatError("n must be >= 1 and m >= 0", lineno)
            demand = np.zeros(n)
        elif tag in ("d", "e"):
            if n is None:
                raise InstanceFormatError("data before problem line", lineno)
            if tag == "d":
                if len(toks) != 3:
                    raise InstanceFormatError("expected 'd <node> <demand>'", lineno)
                v = _int(toks[1], lineno)
                if not 1 <= v <= n:
                    raise InstanceFormatError(f"node {v} out of range", lineno)
                demand[v - 1] += _num(toks[2], lineno)
            else:
                if len(toks) not in (4, 5):
                    raise InstanceFormatError("expected 'e <u> <v> <w> [<w_back>]'", lineno)
                u, v = _int(toks[1], lineno), _int(toks[2], lineno)
                if not (1 <= u <= n and 1 <= v <= n):
                    raise InstanceFormatError("edge endpoint out of range", lineno)
                if u == v:
                    raise InstanceFormatError("self-loop", lineno)
                w = _num(toks[3], lineno)
                wb = _num(toks[4], lineno) if len(toks) == 5 else w
                if w < 0 or wb < 0:
                    raise InstanceFormatError("negative weight", lineno)
                edges.append((u - 1, v - 1, w, wb))
        else:
            raise InstanceFormatError(f"unknown line tag {tag!r}", lineno)
    if n is None:
        raise InstanceFormatError("missing problem line")
    if len(edges) != m:
        raise InstanceFormatError(f"header announces {m} edges, found {len(edges)}")
    total = float(np.sum(demand))
    if abs(total) > 1e-9 * max(1.0, float(np.sum(np.abs(demand)))):
        raise InstanceFormatError(f"demands sum to {total}, expected 0")
    g = make_arc_system(n, edges, check_connected=False)
    if not g.is_connected():
        raise InstanceFormatError("graph is not connected")
    return Instance(g, demand, comments)


def load_instance(path) -> Instance:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InstanceFormatError(f"cannot read {path}: {exc}") from None
    return parse_instance(text)


def format_instance(g: ArcSystem, b: np.ndarray, comments=()) -> str:
    lines = [f"c {c}" for c in comments]
    lines.append(f"p tship {g.n} {g.m}")
    for v, d in enumerate(b):
        if d != 0:
            lines.append(f"d {v + 1} {_fmt(d)}")
    for t, h, wp, wm in zip(g.tail, g.head, g.w_plus, g.w_minus):
        if wp == wm:
            lines.append(f"e {t + 1} {h + 1} {_fmt(wp)}")
        else:
            lines.append(f"e {t + 1} {h + 1} {_fmt(wp)} {_fmt(wm)}")
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))
