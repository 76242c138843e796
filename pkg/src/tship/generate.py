"""Seeded instance generators: path, star, grid and random connected graphs."""
from __future__ import annotations

import math

import numpy as np

from .graph import ArcSystem, make_arc_system, sssp_demand

KINDS = ("path", "star", "grid", "random-connected")


def _weights(rng, count, wmin, wmax, lam):
    w = rng.integers(wmin, wmax + 1, size=count)
    if lam is None or lam <= 1:
        return w, w.copy()
    lo = np.maximum(wmin, np.ceil(w / lam)).astype(np.int64)
    hi = np.floor(w * lam).astype(np.int64)
    back = np.array([rng.integers(a, b + 1) for a, b in zip(lo, hi)], dtype=np.int64)
    return w, back


def generate_graph(kind: str, n: int, seed: int, *, wmin: int = 1, wmax: int = 20,
                   lam: float | None = None, density: float | None = None) -> ArcSystem:
    """Graph of the given kind with integer weights in ``[wmin, wmax]``.

    With ``lam > 1`` each edge gets an independent backward weight within a
    factor ``lam`` of the forward one.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if kind == "path":
        pairs = [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        pairs = [(0, i) for i in range(1, n)]
    elif kind == "grid":
        cols = max(1, math.ceil(math.sqrt(n)))
        pairs = []
        for v in range(n):
            r, c = divmod(v, cols)
            if c + 1 < cols and v + 1 < n:
                pairs.append((v, v + 1))
            if v + cols < n:
                pairs.append((v, v + cols))
    else:
        perm = rng.permutation(n)
        pairs = [(int(perm[i]), int(perm[rng.integers(0, i)])) for i in range(1, n)]
        if density is None:
            density = float(rng.uniform(0.5, 2.0))
        extra = int(round(density * n))
        for _ in range(extra):
            u, v = rng.choice(n, size=2, replace=False)
            pairs.append((int(u), int(v)))
    fw, bw = _weights(rng, len(pairs), wmin, wmax, lam)
    edges = [(u, v, int(a), int(b)) for (u, v), a, b in zip(pairs, fw, bw)]
    return make_arc_system(n, edges)


def random_demand(n: int, seed: int, spread: int = 5) -> np.ndarray:
    """Nonzero integer demands summing to zero."""
    rng = np.random.default_rng(seed)
    if n == 1:
        return np.zeros(1)
    while True:
        b = rng.integers(-spread, spread + 1, size=n).astype(np.float64)
        b[-1] -= b.sum()
        if np.any(b != 0):
            return b


def generate_instance(kind: str, n: int, seed: int, *, demand: str = "random",
                      source: int = 0, **kw):
    """Return ``(graph, demand)``; ``demand`` is ``random`` or ``sssp``."""
    g = generate_graph(kind, n, seed, **kw)
    if demand == "sssp":
        b = sssp_demand(n, source)
    elif demand == "random":
        b = random_demand(n, seed + 7919)
    else:
        raise ValueError(f"unknown demand kind {demand!r}")
    return g, b
