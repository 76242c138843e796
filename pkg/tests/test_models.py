import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tship.descent import solve
from tship.models import (EdgeStream, OutOfPassAccess, RoundMeter, SpaceBudgetExceeded,
                          SpaceMeter, simulate_clique, simulate_stream, space_budget)
from tship.oracle import SpannerOracle
from tship.spanner import build_spanner, default_k

from conftest import random_instance


def _direct(g, b, eps, k=None):
    sp = build_spanner(g, default_k(g.n) if k is None else k)
    return solve(g, b, eps, oracle=SpannerOracle(g, sp.edges, sp.alpha))


def _same_run(a, b):
    assert a.value_dual == b.value_dual
    np.testing.assert_array_equal(a.y, b.y)
    assert [(r.beta, r.potential, r.delta) for r in a.trace] == \
           [(r.beta, r.potential, r.delta) for r in b.trace]


def test_clique_matches_direct_and_formula():
    g, b = random_instance(16, 5)
    res, acc = simulate_clique(g, b, 0.5)
    _same_run(res, _direct(g, b, 0.5))
    assert acc.rounds == acc.formula()
    assert acc.rounds == 1 + acc.spanner_rounds + 3 * res.oracle_calls + res.rescales + 2
    assert acc.per_round_words <= 2


@settings(max_examples=8)
@given(st.integers(0, 10_000), st.booleans())
def test_stream_matches_direct(seed, fused):
    g, b = random_instance(int(np.random.default_rng(seed).integers(4, 18)), seed,
                           lam=1.5 if seed % 2 else None)
    res, acc = simulate_stream(g, b, 0.5, shuffle_seed=seed, fuse_passes=fused)
    _same_run(res, _direct(g, b, 0.5))
    assert acc.passes == acc.formula()
    per = 2 if fused else 3
    assert acc.passes == acc.spanner_passes + per * res.oracle_calls + res.rescales + 3
    assert acc.permanent_words + acc.peak_temporary_words <= acc.budget


def test_stream_shuffles_do_not_matter():
    g, b = random_instance(14, 2, lam=2.0)
    runs = [simulate_stream(g, b, 0.25, shuffle_seed=s)[0] for s in range(4)]
    for r in runs[1:]:
        _same_run(runs[0], r)


def test_clique_and_stream_agree():
    g, b = random_instance(12, 9)
    _same_run(simulate_clique(g, b, 0.25)[0], simulate_stream(g, b, 0.25)[0])


def test_round_meter_enforces_message_size():
    meter = RoundMeter()
    meter.round("ok", 2)
    with pytest.raises(ValueError):
        meter.round("too big", 3)


def test_space_meter_budget():
    meter = SpaceMeter(10)
    meter.keep("a", 6)
    meter.hold("b", 4)
    meter.release("b")
    with pytest.raises(SpaceBudgetExceeded):
        meter.hold("c", 5)


def test_space_budget_formula():
    assert space_budget(16) == 16 * 16 * 4
    assert space_budget(1) == 16


def test_tiny_budget_is_reported():
    g, b = random_instance(12, 1)
    with pytest.raises(SpaceBudgetExceeded):
        simulate_stream(g, b, 0.5, budget_factor=1)


def test_edge_stream_access_rules():
    g, _ = random_instance(10, 3)
    stream = EdgeStream(g, seed=1, chunk=4)
    with pytest.raises(OutOfPassAccess):
        stream.tail
    seen = []
    for idx, t, h, w in stream.scan("one"):
        seen.extend(idx.tolist())
        assert len(idx) <= 4
    assert sorted(seen) == list(range(g.m))
    it = stream.scan("outer")
    next(it)
    with pytest.raises(OutOfPassAccess):
        next(stream.scan("inner"))
    it.close()
    assert stream.passes == 2  # the rejected inner pass is not counted


def test_zero_demand_rejected():
    g, _ = random_instance(6, 1)
    with pytest.raises(ValueError):
        simulate_clique(g, np.zeros(g.n), 0.5)
