import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tship.descent import (ConvergenceError, DescentConfig, LocalEngine, TreeSamplingError,
                           gradient_transshipment, initial_beta, make_oracle, project,
                           recover_primal, sample_forest, sample_tree, solve, symmetrized_start)
from tship.graph import (edge_flow_to_arcs, incidence_apply, incidence_apply_transpose,
                         make_arc_system, primal_cost)
from tship.oracle import ExactOracle, brute_force_tree, exact_transshipment
from tship.potential import aggregate, q_norm, soft_flow

from conftest import random_instance


def test_project_examples():
    b = np.array([-1.0, 1.0])
    pi = np.array([0.0, 1.0])
    np.testing.assert_array_equal(project(pi, b, pi), [0.0, 0.0])
    h = np.array([4.0, 4.0])
    np.testing.assert_array_equal(project(pi, b, h), h)
    np.testing.assert_array_equal(project(pi, b, np.array([1.0, 3.0])), [1.0, 1.0])


@given(st.integers(0, 10_000))
def test_projection_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=6)
    b -= b.mean()
    pi = rng.normal(size=6)
    pi /= b @ pi
    h = rng.normal(size=6)
    ph = project(pi, b, h)
    assert abs(b @ ph) < 1e-9 * (1 + np.abs(h).sum() * np.abs(pi).sum() * np.abs(b).sum())
    np.testing.assert_allclose(project(pi, b, ph), ph, atol=1e-9)


def test_single_edge_solve(edge):
    res = solve(edge, np.array([-1.0, 1.0]), 0.5, oracle=ExactOracle(edge))
    assert 2 / 3 <= res.value_dual <= 1 + 1e-12


def test_path_graph_exact_oracle():
    g = make_arc_system(6, [(i, i + 1, float(w)) for i, w in enumerate([3, 1, 4, 1, 5])])
    b = np.array([-2.0, 1.0, -1.0, 0.0, 3.0, -1.0])
    opt = brute_force_tree(g, b).value
    res = solve(g, b, 0.25, oracle=ExactOracle(g))
    assert opt / 1.25 - 1e-9 <= res.value_dual <= opt + 1e-9


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.25]), st.booleans())
def test_duality_sandwich(seed, eps, asym):
    rng = np.random.default_rng(seed)
    g, b = random_instance(int(rng.integers(3, 14)), seed, lam=2.5 if asym else None)
    opt = exact_transshipment(g, b).value
    res = solve(g, b, eps, oracle=ExactOracle(g), primal=True)
    assert q_norm(incidence_apply_transpose(g, res.y)) <= 1 + 1e-9
    np.testing.assert_allclose(incidence_apply(g, res.x), b, atol=1e-8)
    assert res.value_dual <= opt * (1 + 1e-9)
    assert opt <= res.value_primal * (1 + 1e-9)
    assert res.value_primal <= (1 + eps) * res.value_dual * (1 + 1e-9)


def test_spanner_oracle_solve():
    g, b = random_instance(25, 17, lam=2.0)
    opt = exact_transshipment(g, b).value
    res = solve(g, b, 0.25, primal=True)
    assert res.alpha > 1
    assert opt / 1.25 - 1e-9 <= res.value_dual <= opt + 1e-9
    assert res.value_primal <= 1.25 * res.value_dual * (1 + 1e-9)


def test_accepted_steps_decrease_potential():
    g, b = random_instance(12, 3)
    res = solve(g, b, 0.25, oracle=ExactOracle(g))
    for rec in res.trace:
        if rec.accepted:
            assert rec.phi_after <= rec.decrement_bound(0.25, g.m) * (1 + 1e-12)


def test_zero_demand(edge):
    res = solve(edge, np.zeros(2), 0.5, primal=True)
    assert res.value_dual == 0 and res.trace == []


def test_input_validation(edge):
    with pytest.raises(ValueError):
        solve(edge, np.array([1.0, 1.0]), 0.5)
    with pytest.raises(ValueError):
        solve(edge, np.array([-1.0, 1.0]), 0.75)
    with pytest.raises(ValueError):
        solve(edge, np.array([-1.0, 0.0, 1.0]), 0.5)
    with pytest.raises(ValueError):
        DescentConfig(0.0)


def test_iteration_cap_raises():
    g, b = random_instance(12, 3)
    with pytest.raises(ConvergenceError) as err:
        solve(g, b, 0.1, oracle=ExactOracle(g), max_iterations=2)
    assert err.value.trace


def test_descent_requires_normalised_start(edge):
    cfg = DescentConfig(0.5)
    with pytest.raises(ValueError):
        gradient_transshipment(edge, np.array([-1.0, 1.0]), np.array([0.0, 2.0]), 1.0, cfg,
                               oracle=ExactOracle(edge))


def test_recover_primal_exact_optimum():
    # at an optimal pi the projected gradient vanishes and x = x1 / (pi^T grad)
    g = make_arc_system(2, [(0, 1, 1.0)])
    b = np.array([-1.0, 1.0])
    pi = np.array([0.0, 1.0])
    beta = 30.0
    rep = aggregate(g, beta, pi)
    x = recover_primal(g, b, pi, beta, np.zeros(2), rep)
    np.testing.assert_allclose(x, soft_flow(g, beta, pi) / (pi @ rep.grad))


def test_recover_primal_single_edge(edge):
    b = np.array([-1.0, 1.0])
    res = solve(edge, b, 0.25, oracle=ExactOracle(edge), primal=True)
    assert res.value_primal <= 1.25 * res.value_dual


def test_symmetrized_start_symmetric_exact():
    g, b = random_instance(10, 6)
    pi0 = symmetrized_start(g, b, ExactOracle(g))
    assert b @ pi0 == pytest.approx(1.0)
    opt = exact_transshipment(g, b).value
    # normalised optimum: max stretch equals 1/OPT
    assert q_norm(incidence_apply_transpose(g, pi0)) == pytest.approx(1 / opt, rel=1e-9)


def test_symmetrized_start_asymmetric_edge():
    g = make_arc_system(2, [(0, 1, 4.0, 2.0)])
    b = np.array([-1.0, 1.0])
    pi0 = symmetrized_start(g, b, ExactOracle(g))
    q0 = q_norm(incidence_apply_transpose(g, pi0))
    assert q0 <= g.lam / 4.0 + 1e-12  # OPT = 4


@given(st.integers(0, 5000))
def test_symmetrized_start_spanner(seed):
    g, b = random_instance(18, seed, lam=3.0)
    oracle = make_oracle(g)
    pi0 = symmetrized_start(g, b, oracle)
    opt = exact_transshipment(g, b).value
    q0 = q_norm(incidence_apply_transpose(g, pi0))
    assert q0 * opt <= oracle.alpha * g.lam * (1 + 1e-9)


def test_initial_beta_in_window():
    g, b = random_instance(14, 2)
    engine = LocalEngine(g, ExactOracle(g))
    pi0 = symmetrized_start(g, b, engine.oracle)
    M = engine.max_stretch(pi0)
    for eps in (0.5, 0.1, 0.01):
        beta = initial_beta(g, eps, M)
        phi = aggregate(g, beta, pi0).phi
        assert 4 * math.log(2 * g.m) < eps * beta * phi <= 5 * math.log(2 * g.m)


# ------------------------------------------------------------------ trees


def _arc_flow(g, z):
    return edge_flow_to_arcs(np.asarray(z, dtype=float))


def test_tree_on_path_is_deterministic():
    g = make_arc_system(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
    x1 = _arc_flow(g, [0.25, 0.25, 0.25])
    a = sample_tree(g, x1, 0.5, 0)
    b = sample_tree(g, x1, 0.5, 99)
    assert a.edges == b.edges == [0, 1, 2]
    np.testing.assert_allclose(a.flow, [0.25, 0.25, 0.25])


def test_diamond_split():
    # 0 -> {1, 2} -> 3 with the flow split evenly
    g = make_arc_system(4, [(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)])
    x1 = _arc_flow(g, [0.25, 0.25, 0.25, 0.25])
    rng = np.random.default_rng(7)
    picks = [3 in sample_forest(g, x1, rng).edges for _ in range(10_000)]
    assert abs(np.mean(picks) - 0.5) <= 0.02


def test_zero_flow_gives_empty_forest(edge):
    s = sample_tree(edge, np.zeros(2), 0.5, 0)
    assert s.edges == [] and s.cost == 0


def test_forest_routes_the_flow_demand():
    g, b = random_instance(10, 8)
    res = solve(g, b, 0.25, oracle=ExactOracle(g))
    x1 = soft_flow(g, res.beta_final, res.pi)
    s = sample_forest(g, x1, np.random.default_rng(0))
    got = (np.bincount(g.head, weights=s.flow, minlength=g.n)
           - np.bincount(g.tail, weights=s.flow, minlength=g.n))
    want = incidence_apply(g, x1)
    z = x1[: g.m] - x1[g.m:]
    # the kept arc of a node points into it along the support orientation
    heads = {int(g.head[e]) if z[e] > 0 else int(g.tail[e]) for e in s.edges}
    roots = [v for v in range(g.n) if v not in heads]
    inner = sorted(heads)
    np.testing.assert_allclose(got[inner], want[inner], atol=1e-12)
    assert abs(got[roots].sum() + got[inner].sum()) < 1e-12
    assert len(s.edges) == g.n - len(roots)


def test_tree_sampling_error_after_budget():
    # x1 with opposite demands on a diamond; no forest reaches cost 1 + eps/8
    g = make_arc_system(4, [(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)])
    x1 = _arc_flow(g, [0.5, 0.5, 0.5, 0.5])
    with pytest.raises(TreeSamplingError):
        sample_tree(g, x1 * 10, 0.5, 0)
