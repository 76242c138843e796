import numpy as np
import pytest
from hypothesis import given, strategies as st

from tship.graph import (InstanceFormatError, edge_cost, format_instance, incidence_apply,
                         incidence_apply_transpose, is_trivial_demand, make_arc_system,
                         net_flow, parse_instance, preprocess_weights, primal_cost, sssp_demand)

from conftest import random_instance


def test_stretch_single_edge(edge):
    s = incidence_apply_transpose(edge, np.array([0.0, 1.0]))
    assert s.tolist() == [1.0, -1.0]


def test_stretch_asymmetric_edge():
    g = make_arc_system(2, [(0, 1, 4.0, 2.0)])
    s = incidence_apply_transpose(g, np.array([0.0, 4.0]))
    assert s.tolist() == [1.0, -2.0]


def test_orientation_prefers_larger_forward_cost():
    g = make_arc_system(2, [(0, 1, 2.0, 4.0)])
    assert (g.tail[0], g.head[0]) == (1, 0)
    assert g.w_plus[0] == 4.0 and g.w_minus[0] == 2.0
    assert g.lam == 2.0


def test_tie_orients_small_to_large():
    g = make_arc_system(2, [(1, 0, 3.0)])
    assert (g.tail[0], g.head[0]) == (0, 1)


@given(st.floats(-50, 50))
def test_constant_potential_has_zero_stretch(c):
    g, _ = random_instance(7, 3)
    assert np.all(incidence_apply_transpose(g, np.full(g.n, c)) == 0)


def test_incidence_apply_examples(edge):
    assert incidence_apply(edge, np.array([1.0, 0.0])).tolist() == [-1.0, 1.0]
    assert incidence_apply(edge, np.zeros(2)).tolist() == [0.0, 0.0]
    p = make_arc_system(3, [(0, 1, 1.0), (1, 2, 1.0)])
    assert incidence_apply(p, np.array([1.0, 1.0, 0.0, 0.0])).tolist() == [-1.0, 0.0, 1.0]


@given(st.integers(0, 10_000))
def test_adjoint_identity(seed):
    g, _ = random_instance(9, seed, lam=2.0)
    rng = np.random.default_rng(seed)
    x = rng.random(2 * g.m)
    y = rng.normal(size=g.n)
    lhs = y @ incidence_apply(g, x)
    # x has one entry per arc; stretches are scaled by the arc's cost
    w = np.concatenate([g.w_plus, g.w_minus])
    rhs = x @ (incidence_apply_transpose(g, y) * w)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_costs_of_arc_and_edge_flows():
    g = make_arc_system(2, [(0, 1, 4.0, 2.0)])
    x = np.array([1.0, 3.0])
    # opposing arc flows cancel: 2 units backward at cost 2
    assert primal_cost(g, x) == 4.0
    assert net_flow(g, x).tolist() == [-2.0]
    assert edge_cost(g, np.array([-2.0])) == 4.0


def test_preprocess_weights():
    g = make_arc_system(4, [(0, 1, 3), (1, 2, 0), (2, 3, 3)])
    h = preprocess_weights(g, 0.5)
    assert sorted(h.w_plus.tolist()) == [1.0, 25.0, 25.0]
    g = make_arc_system(10, [(i, i + 1, 1) for i in range(9)])
    assert set(preprocess_weights(g, 1.0).w_plus.tolist()) == {11.0}


def test_sssp_demand():
    assert sssp_demand(3, 0).tolist() == [-2.0, 1.0, 1.0]
    assert sssp_demand(2, 1).tolist() == [1.0, -1.0]
    b = sssp_demand(1, 0)
    assert b.tolist() == [0.0] and is_trivial_demand(b)


def test_parse_round_trip():
    g, b = random_instance(8, 11, lam=2.0)
    inst = parse_instance(format_instance(g, b, ["x"]))
    assert inst.comments == ["x"]
    np.testing.assert_array_equal(inst.demand, b)
    np.testing.assert_array_equal(inst.graph.w_plus, g.w_plus)
    np.testing.assert_array_equal(inst.graph.tail, g.tail)


@pytest.mark.parametrize("text, line", [
    ("p tship 2 1\nd 1 -1\nd 2 1\ne 1 3 1\n", 4),
    ("p tship 2 1\nd 1 -1\nd 2 1\ne 1 2 -1\n", 4),
    ("p tship 2 1\nd 1 x\n", 2),
    ("p tship 2 1\nd 1 -1\nd 2 1\nq\n", 4),
    ("d 1 1\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(InstanceFormatError) as err:
        parse_instance(text)
    assert err.value.line == line


@pytest.mark.parametrize("text", [
    "p tship 2 1\nd 1 -1\nd 2 2\ne 1 2 1\n",  # unbalanced
    "p tship 3 1\nd 1 -1\nd 2 1\ne 1 2 1\n",  # disconnected
    "p tship 2 2\nd 1 -1\nd 2 1\ne 1 2 1\n",  # edge count
])
def test_parse_rejects_bad_instances(text):
    with pytest.raises(InstanceFormatError):
        parse_instance(text)
