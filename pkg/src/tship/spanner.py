"""Deterministic Baswana-Sen style (2k-1)-spanner on the ``w_minus`` weights.

The clustering runs k-1 phases followed by a joining step.  In phase i each
node v learns ``Q_v``: its lightest edge to every adjacent foreign cluster,
ordered by (weight, neighbour id, edge id).  Only the first
``T = ceil(4 n^(1/k) ln n)`` entries (``Q'_v``) are shipped; nodes with more
adjacent clusters are "heavy" and must see a kept cluster inside ``Q'_v``.
The kept clusters are chosen greedily instead of by random sampling.  The
stretch argument does not depend on which clusters are kept, so the result
is always a (2k-1)-spanner; the choice only affects its size.

Edge removals are not stored per edge.  An edge is still active when its
endpoints sit in different clusters, were never in a common cluster, and
neither endpoint has already handled the other's cluster of some earlier
phase.  That needs only the cluster history and the handled sets, so a
single pass over an edge stream can rebuild the lists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import ArcSystem


def default_k(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def spanner_alpha(n: int) -> int:
    """Stretch ``2k - 1`` for the default ``k = ceil(log2 n)``."""
    return 2 * default_k(n) - 1


def truncation(n: int, k: int) -> int:
    """Length of the shipped prefix ``Q'_v``."""
    return max(1, math.ceil(4 * n ** (1.0 / k) * math.log(max(n, 2))))


@dataclass
class PhaseLog:
    kept: int
    clusters: int
    heavy: int
    uncovered: int
    max_shipped: int  # longest truncated list a single node had to ship
    fallback_shipped: int = 0  # longest full list shipped by an uncovered heavy node


@dataclass
class SpannerResult:
    edges: np.ndarray
    k: int
    alpha: int
    phases: list[PhaseLog] = field(default_factory=list)
    final_max_shipped: int = 0
    passes: int = 0
    records: tuple | None = None  # (tail, head, w_minus) per edge, as read from the source

    @property
    def size(self) -> int:
        return int(self.edges.size)

    @property
    def broadcast_rounds(self) -> int:
        """Rounds when every shipped edge costs one 2-word broadcast."""
        return (sum(p.max_shipped + p.fallback_shipped for p in self.phases)
                + self.final_max_shipped)

    def size_bound(self, n: int, c: float = 8.0) -> float:
        return c * self.k * n ** (1 + 1.0 / self.k) * max(1, math.ceil(math.log2(max(n, 2))))


class MemoryEdges:
    """Edge source reading the whole edge list at once."""

    def __init__(self, g: ArcSystem):
        self.g = g
        self.scans = 0

    def scan(self, label: str):
        self.scans += 1
        g = self.g
        yield np.arange(g.m), g.tail, g.head, g.w_minus


class _State:
    def __init__(self, n):
        self.cluster = list(range(n))
        self.history: list[list[int]] = []
        self.handled: list[set] = [set() for _ in range(n)]

    def active(self, t, h) -> bool:
        ct, ch = self.cluster[t], self.cluster[h]
        if ct < 0 or ch < 0 or ct == ch:
            return False
        ht, hh = self.handled[t], self.handled[h]
        for j, hist in enumerate(self.history):
            a, b = hist[t], hist[h]
            if a == b or (j, b) in ht or (j, a) in hh:
                return False
        return True


def _collect(source, state: _State, n: int, limit, label, only=None, meter=None,
             slot="spanner lists"):
    """Per-node lightest edge to each foreign cluster (at most ``limit`` kept)."""
    best = [dict() for _ in range(n)]
    truncated = [False] * n
    held = 0
    for idx, tail, head, w in source.scan(label):
        for e, t, h, wt in zip(idx.tolist(), tail.tolist(), head.tolist(), w.tolist()):
            if not state.active(t, h):
                continue
            for v, u in ((t, h), (h, t)):
                if only is not None and v not in only:
                    continue
                c = state.cluster[u]
                key = (wt, u, e, c, t, h)
                cur = best[v].get(c)
                if cur is not None:
                    if key < cur:
                        best[v][c] = key
                    continue
                best[v][c] = key
                held += 1
                if limit is not None and len(best[v]) > limit:
                    worst = max(best[v].items(), key=lambda kv: kv[1])[0]
                    del best[v][worst]
                    held -= 1
                    truncated[v] = True
                if meter is not None:
                    meter.hold(slot, 3 * held)
    lists = [sorted(d.values()) for d in best]
    return lists, truncated


def _select_clusters(R, lists, truncated, cluster, budget):
    """Greedy deterministic replacement for sampling ``R_{i+1}``.

    Heavy nodes (truncated lists) are covered first, then the others; a
    node is covered by its own cluster or by any cluster in its list.
    """
    n = len(lists)
    heavy = [v for v in range(n) if truncated[v] and cluster[v] >= 0]
    covers = {c: [] for c in R}
    for v in range(n):
        if cluster[v] < 0 or not lists[v]:
            continue
        for c in {cluster[v]} | {entry[3] for entry in lists[v]}:
            covers[c].append(v)
    is_heavy = [False] * n
    for v in heavy:
        is_heavy[v] = True
    done = [False] * n
    kept = []
    remaining = set(R)
    while len(kept) < budget and remaining:
        best_key = None
        for c in remaining:
            hv = lv = 0
            for v in covers[c]:
                if not done[v]:
                    if is_heavy[v]:
                        hv += 1
                    else:
                        lv += 1
            key = (hv, lv, c)
            if best_key is None or key > best_key:
                best_key = key
        if best_key[0] == 0 and best_key[1] == 0:
            break
        c = best_key[2]
        kept.append(c)
        remaining.discard(c)
        for v in covers[c]:
            done[v] = True
    uncovered = [v for v in heavy if not done[v]]
    return set(kept), heavy, uncovered


def build_spanner(g: ArcSystem, k: int | None = None, source=None, meter=None) -> SpannerResult:
    """(2k-1)-spanner of ``(V, E, w_minus)``; returns edge indices into g.

    ``source`` provides edge scans (``MemoryEdges`` by default; the
    streaming model passes its pass-counting stream).  Each phase costs one
    scan, plus one for heavy nodes that were left uncovered, and the joining
    step costs one more.
    """
    n = g.n
    if k is None:
        k = default_k(n)
    if k < 1:
        raise ValueError("k must be at least 1")
    source = source or MemoryEdges(g)
    limit = truncation(n, k)
    st = _State(n)
    R = set(range(n))
    chosen: dict[int, tuple] = {}
    logs = []
    passes = 0
    for phase in range(k - 1):
        lists, truncated = _collect(source, st, n, limit, f"spanner phase {phase + 1}", meter=meter)
        passes += 1
        budget = int(math.floor(len(R) * n ** (-1.0 / k) + 1e-12))
        kept, heavy, uncovered = _select_clusters(R, lists, truncated, st.cluster, budget)
        shipped = max((len(lists[v]) for v in range(n) if st.cluster[v] >= 0), default=0)
        fallback = 0
        if uncovered:
            extra, _ = _collect(source, st, n, None, f"spanner phase {phase + 1} fallback",
                                only=set(uncovered), meter=meter, slot="spanner fallback")
            passes += 1
            for v in uncovered:
                lists[v] = extra[v]
                fallback = max(fallback, len(extra[v]))
        new_cluster = list(st.cluster)
        for v in range(n):
            if st.cluster[v] < 0:
                continue
            if st.cluster[v] in kept:
                continue
            Q = lists[v]
            pos = next((i for i, entry in enumerate(Q) if entry[3] in kept), None)
            upto = len(Q) if pos is None else pos + 1
            for entry in Q[:upto]:
                chosen[entry[2]] = (entry[4], entry[5], entry[0])
                st.handled[v].add((phase, entry[3]))
            new_cluster[v] = -1 if pos is None else Q[pos][3]
        st.history.append(st.cluster)
        st.cluster = new_cluster
        logs.append(PhaseLog(len(kept), len(R), len(heavy), len(uncovered), shipped, fallback))
        R = kept
        if meter is not None:
            meter.release("spanner lists")
            meter.release("spanner fallback")
            words = n * (len(st.history) + 1) + 2 * sum(len(x) for x in st.handled)
            meter.hold("spanner state", words)
            meter.hold("spanner edges", 3 * len(chosen))
    lists, _ = _collect(source, st, n, None, "spanner join", meter=meter)
    passes += 1
    final_max = 0
    for v in range(n):
        final_max = max(final_max, len(lists[v]))
        for entry in lists[v]:
            chosen[entry[2]] = (entry[4], entry[5], entry[0])
    edges = np.array(sorted(chosen), dtype=np.int64)
    rec = [chosen[e] for e in edges.tolist()]
    records = (np.array([r[0] for r in rec], dtype=np.int64),
               np.array([r[1] for r in rec], dtype=np.int64),
               np.array([r[2] for r in rec], dtype=np.float64))
    if meter is not None:
        for slot in ("spanner lists", "spanner state", "spanner edges"):
            meter.release(slot)
    return SpannerResult(edges, k, 2 * k - 1, logs, final_max, passes, records)


def spanner_stretch(g: ArcSystem, edges) -> float:
    """Largest ratio ``dist_H(u, v) / w(u, v)`` over all edges of g (``w_minus``)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    edges = np.asarray(edges, dtype=np.int64)
    best = {}
    for a, b, c in zip(g.tail[edges].tolist(), g.head[edges].tolist(),
                       g.w_minus[edges].tolist()):
        key = (min(a, b), max(a, b))
        # csgraph sums duplicate entries, so keep only the lightest copy
        if key not in best or c < best[key]:
            best[key] = c
    rows = [a for a, _ in best]
    cols = [b for _, b in best]
    vals = np.maximum(np.array(list(best.values()), dtype=float), 1e-300)
    mat = coo_matrix((vals, (rows, cols)), shape=(g.n, g.n)).tocsr()
    dist = dijkstra(mat, directed=False)
    ratios = dist[g.tail, g.head] / np.maximum(g.w_minus, 1e-300)
    return float(np.max(ratios)) if ratios.size else 1.0
