import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from tship.graph import make_arc_system
from tship.spanner import build_spanner, default_k, spanner_alpha, spanner_stretch

from conftest import random_instance


def _nx(g, edges=None):
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    for e in (range(g.m) if edges is None else edges):
        u, v, w = int(g.tail[e]), int(g.head[e]), float(g.w_minus[e])
        if not G.has_edge(u, v) or G[u][v]["weight"] > w:  # parallel edges
            G.add_edge(u, v, weight=w)
    return G


def _apsp_stretch(g, edges):
    full = dict(nx.all_pairs_dijkstra_path_length(_nx(g)))
    sub = dict(nx.all_pairs_dijkstra_path_length(_nx(g, edges)))
    return max(sub[u][v] / full[u][v] for u in full for v in full[u] if u != v)


@pytest.mark.parametrize("n, alpha", [(16, 7), (2, 1), (1000, 19)])
def test_spanner_alpha(n, alpha):
    assert spanner_alpha(n) == alpha
    assert 2 * default_k(n) - 1 == alpha


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_tree_is_kept(k):
    g, _ = random_instance(12, 5)
    T = nx.minimum_spanning_tree(_nx(g))
    ids = {frozenset((int(g.tail[e]), int(g.head[e]))): e for e in range(g.m)}
    tree = make_arc_system(12, [(u, v, d["weight"]) for u, v, d in T.edges(data=True)])
    sp = build_spanner(tree, k)
    assert sorted(sp.edges.tolist()) == list(range(tree.m))
    assert len(ids) >= tree.m


def test_single_edge(edge):
    assert build_spanner(edge, 1).edges.tolist() == [0]


def test_k5_unit_weights():
    g = make_arc_system(5, [(u, v, 1.0) for u, v in itertools.combinations(range(5), 2)])
    sp = build_spanner(g, 2)
    assert _apsp_stretch(g, sp.edges) <= 3
    assert sp.size <= sp.size_bound(5)


@given(st.integers(0, 5000), st.integers(2, 40), st.integers(1, 5))
def test_stretch_and_size(seed, n, k):
    g, _ = random_instance(n, seed, lam=2.0)
    sp = build_spanner(g, k)
    assert set(sp.edges.tolist()) <= set(range(g.m))
    assert len(set(sp.edges.tolist())) == sp.size
    assert sp.alpha == 2 * k - 1
    s = spanner_stretch(g, sp.edges)
    assert s <= sp.alpha + 1e-9
    assert s == pytest.approx(_apsp_stretch(g, sp.edges), rel=1e-9)
    assert sp.size <= sp.size_bound(n)


def test_deterministic():
    g, _ = random_instance(30, 9)
    a = build_spanner(g, 3)
    b = build_spanner(g, 3)
    np.testing.assert_array_equal(a.edges, b.edges)


def test_invariant_under_edge_order():
    g, _ = random_instance(25, 3)
    perm = np.random.default_rng(0).permutation(g.m)
    h = make_arc_system(g.n, [(g.tail[e], g.head[e], g.w_plus[e], g.w_minus[e]) for e in perm])
    key = lambda G, es: sorted((int(G.tail[e]), int(G.head[e])) for e in es)
    assert key(g, build_spanner(g, 3).edges) == key(h, build_spanner(h, 3).edges)
