import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from tship.graph import edge_cost, incidence_apply_transpose, make_arc_system
from tship.potential import q_norm
from tship.oracle import (ExactOracle, SpannerOracle, approx_oracle, brute_force_tree,
                          dijkstra, dual_objective, exact_transshipment)
from tship.spanner import build_spanner

from conftest import random_instance


def _routes(g, z, q):
    got = np.bincount(g.head, weights=z, minlength=g.n) - np.bincount(g.tail, weights=z, minlength=g.n)
    return np.allclose(got, q, atol=1e-9)


def _digraph(g, forward, backward):
    G = nx.DiGraph()
    G.add_nodes_from(range(g.n))
    for e in range(g.m):
        u, v = int(g.tail[e]), int(g.head[e])
        for a, c, w in ((u, v, forward[e]), (v, u, backward[e])):
            if not G.has_edge(a, c) or G[a][c]["weight"] > w:  # parallel edges
                G.add_edge(a, c, weight=w)
    return G


def test_single_edge():
    g = make_arc_system(2, [(0, 1, 5.0)])
    sol = exact_transshipment(g, np.array([-2.0, 2.0]))
    assert sol.value == pytest.approx(10.0)
    assert abs(sol.flow[0]) == pytest.approx(2.0)
    h = sol.potentials - sol.potentials[0]
    np.testing.assert_allclose(h, [0.0, 5.0])


def test_path_and_triangle(path3, triangle):
    q = np.array([-1.0, 0.0, 1.0])
    assert exact_transshipment(path3, q).value == pytest.approx(5.0)
    sol = exact_transshipment(triangle, q)
    assert sol.value == pytest.approx(2.0)
    assert sol.flow[2] == 0  # 1-3 edge unused
    assert brute_force_tree(triangle, q).value == pytest.approx(2.0)


def test_brute_force_tree_input(path3):
    q = np.array([-1.0, 0.0, 1.0])
    ref = brute_force_tree(path3, q)
    assert ref.value == pytest.approx(5.0)
    assert ref.potentials is None


def test_zero_demand(triangle):
    sol = brute_force_tree(triangle, np.zeros(3))
    assert sol.value == 0 and not np.any(sol.flow)
    assert exact_transshipment(triangle, np.zeros(3)).value == 0
    ans = approx_oracle(triangle, np.zeros(3))
    assert ans.zero_demand and not np.any(ans.h)


def test_dual_objective():
    assert dual_objective([-1, 1], [0, 5]) == 5
    assert dual_objective([0, 0], [1, 2]) == 0
    assert dual_objective([-1, 1], [3, 3]) == 0


@given(st.integers(0, 100_000))
def test_exact_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    g, b = random_instance(n, seed, lam=float(rng.uniform(1, 3)))
    if g.m > 8:
        return
    sym = g.symmetrized()
    sol = exact_transshipment(sym, b)
    ref = brute_force_tree(sym, b)
    assert sol.value == pytest.approx(ref.value, rel=1e-9, abs=1e-9)
    assert _routes(sym, sol.flow, b)
    # strong duality with a feasible potential
    assert q_norm(incidence_apply_transpose(sym, sol.potentials)) <= 1 + 1e-9
    assert b @ sol.potentials == pytest.approx(sol.value, rel=1e-9)


@given(st.integers(0, 100_000))
def test_exact_matches_networkx(seed):
    g, b = random_instance(15, seed)
    w = g.w_minus.astype(int).tolist()
    G = _digraph(g, w, w)
    for v in range(g.n):
        G.nodes[v]["demand"] = int(b[v])
    ref = nx.min_cost_flow_cost(G)
    assert exact_transshipment(g, b).value == pytest.approx(ref, rel=1e-12)


@given(st.integers(0, 5000), st.integers(1, 3))
def test_spanner_oracle_guarantee(seed, k):
    g, b = random_instance(20, seed, lam=2.0)
    sp = build_spanner(g, k)
    oracle = SpannerOracle(g, sp.edges, sp.alpha)
    ans = oracle(b)
    opt = exact_transshipment(g.symmetrized(), b).value
    h = ans.h
    assert np.max(np.abs(incidence_apply_transpose(g.symmetrized(), h))) == pytest.approx(1.0)
    assert b @ h >= opt / sp.alpha - 1e-9
    assert b @ h <= opt + 1e-9
    # the subgraph flow routes b at cost <= alpha * b^T h
    assert _routes(g, ans.flow, b)
    assert edge_cost(g.symmetrized(), ans.flow) <= sp.alpha * (b @ h) + 1e-9


def test_full_spanner_is_exact():
    g, b = random_instance(12, 1)
    ans = SpannerOracle(g, np.arange(g.m), 1.0)(b)
    assert ans.value == pytest.approx(exact_transshipment(g, b).value)
    assert ExactOracle(g)(b).value == pytest.approx(ans.value)


def test_dijkstra_matches_networkx():
    g, _ = random_instance(25, 4, lam=3.0)
    G = _digraph(g, g.w_plus.tolist(), g.w_minus.tolist())
    ref = nx.single_source_dijkstra_path_length(G, 0)
    d = dijkstra(g, 0)
    assert all(d[v] == pytest.approx(ref[v]) for v in range(g.n))


@given(st.integers(0, 100_000))
def test_exact_asymmetric_matches_networkx(seed):
    g, b = random_instance(12, seed, lam=3.0)
    G = _digraph(g, g.w_plus.astype(int).tolist(), g.w_minus.astype(int).tolist())
    for v in range(g.n):
        G.nodes[v]["demand"] = int(b[v])
    sol = exact_transshipment(g, b)
    assert sol.value == pytest.approx(nx.min_cost_flow_cost(G), rel=1e-12)
    assert _routes(g, sol.flow, b)
    assert edge_cost(g, sol.flow) == pytest.approx(sol.value, rel=1e-12)
