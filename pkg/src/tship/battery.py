"""Seeded experiment batteries behind ``tship battery`` and the acceptance tests.

Every criterion returns a ``CriterionResult`` with a pass flag and the
measured numbers.  Instances are drawn from fixed seeds, so a battery is
reproducible run to run.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .descent import ConvergenceError, make_oracle, sample_forest, sample_tree, solve, _dag
from .generate import generate_graph, generate_instance, random_demand
from .graph import incidence_apply, incidence_apply_transpose, primal_cost
from .models import simulate_clique, simulate_stream
from .oracle import ExactOracle, SpannerOracle, brute_force_tree, dijkstra, exact_transshipment
from .potential import (aggregate, potential, q_norm, soft_flow, softmax,
                        softmax_gradient)
from .spanner import build_spanner, spanner_stretch
from .sssp import single_source_shortest_path

EPSILONS = (0.5, 0.25, 0.1)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{status}] criterion {self.number:2d} {self.name}: {info}"

    def as_dict(self) -> dict:
        return {"criterion": self.number, "name": self.name, "passed": self.passed,
                "seconds": round(self.seconds, 3),
                "detail": {k: _jsonable(v) for k, v in self.detail.items()}}


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    return v


def _timed(fn):
    def run(*args, **kw):
        t = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


# ---------------------------------------------------------------- criteria 1-3


@dataclass
class DualityRun:
    index: int
    n: int
    m: int
    eps: float
    lam: float
    symmetric: bool
    opt: float
    dual: float
    primal: float
    y_stretch: float
    residual: float
    b_norm: float
    trace: list
    phi0: float
    seconds: float
    error: str | None = None


def duality_instances(count: int = 200):
    """``(index, graph, demand, eps)``: n in [5, 50], weights 1-20, odd runs asymmetric."""
    for i in range(count):
        rng = np.random.default_rng(1000 + i)
        n = int(rng.integers(5, 51))
        eps = EPSILONS[i % 3]
        lam = float(rng.uniform(1.25, 4)) if i % 2 else None
        g, b = generate_instance("random-connected", n, 1000 + i, lam=lam)
        yield i, g, b, eps


def duality_runs(count: int = 200) -> list[DualityRun]:
    runs = []
    for i, g, b, eps in duality_instances(count):
        opt = exact_transshipment(g, b).value
        t = time.perf_counter()
        try:
            r = solve(g, b, eps, oracle=ExactOracle(g), primal=True)
        except ConvergenceError as exc:
            runs.append(DualityRun(i, g.n, g.m, eps, g.lam, g.symmetric, opt, math.nan,
                                   math.nan, math.nan, math.nan, 0.0, exc.trace, math.nan,
                                   time.perf_counter() - t, str(exc)))
            continue
        dt = time.perf_counter() - t
        residual = float(np.max(np.abs(incidence_apply(g, r.x) - b)))
        runs.append(DualityRun(i, g.n, g.m, eps, g.lam, g.symmetric, opt, r.value_dual,
                               r.value_primal, q_norm(incidence_apply_transpose(g, r.y)),
                               residual, float(np.abs(b).sum()), r.trace, r.phi0, dt))
    return runs


@_timed
def criterion_duality(runs: list[DualityRun]) -> CriterionResult:
    bad = []
    solve_time = sum(r.seconds for r in runs)
    for r in runs:
        rel = 1e-9 * max(1.0, abs(r.opt))
        ok = (r.error is None
              and r.y_stretch <= 1 + 1e-9
              and r.residual <= 1e-9 * r.b_norm
              and r.primal <= (1 + r.eps) * (1 + 1e-6) * r.dual
              and r.dual <= r.opt + rel
              and r.opt <= r.primal + rel)
        if not ok:
            bad.append(r.index)
    worst = max((r.primal / r.dual - 1 for r in runs if r.error is None), default=math.nan)
    return CriterionResult(1, "duality gap suite", not bad and solve_time < 300,
                           {"runs": len(runs), "failures": len(bad), "first_failures": bad[:5],
                            "solve_seconds": solve_time, "worst_gap": worst})


@_timed
def criterion_decrement(runs: list[DualityRun]) -> CriterionResult:
    steps = 0
    bad = 0
    worst = -math.inf
    for r in runs:
        for rec in r.trace:
            if not rec.accepted:
                continue
            steps += 1
            bound = rec.decrement_bound(r.eps, r.m)
            worst = max(worst, rec.phi_after / bound - 1)
            if rec.phi_after > bound * (1 + 1e-9):
                bad += 1
    return CriterionResult(2, "per-step potential decrement", bad == 0 and steps > 0,
                           {"accepted_steps": steps, "violations": bad,
                            "max_relative_excess": worst})


@_timed
def criterion_iterations(runs: list[DualityRun]) -> CriterionResult:
    checked = 0
    bad = []
    capped = [r.index for r in runs if r.error is not None]
    worst = 0.0
    for r in runs:
        if not r.symmetric or r.error is not None:
            continue
        checked += 1
        steps = sum(1 for rec in r.trace if rec.accepted)
        ratio = math.log(r.phi0 / r.trace[-1].potential)
        bound = 4 * 640 * math.log(2 * r.m) * r.eps ** -3 * ratio
        worst = max(worst, steps / bound if bound > 0 else (math.inf if steps else 0.0))
        if steps > bound:
            bad.append(r.index)
    return CriterionResult(3, "iteration bound (exact oracle, symmetric)",
                           not bad and not capped and checked > 0,
                           {"runs": checked, "violations": len(bad), "capped": len(capped),
                            "max_steps_over_bound": worst})


# ---------------------------------------------------------------- criterion 4


def sssp_instances():
    for i in range(50):
        rng = np.random.default_rng(500 + i)
        n = int(rng.integers(2, 31))
        g = generate_graph("random-connected", n, 500 + i)
        yield f"random-{i}", g, int(rng.integers(0, n)), (0.5, 0.25)[i % 2]
    for kind in ("path", "star", "grid"):
        for n, eps in ((9, 0.5), (16, 0.25), (25, 0.5)):
            yield f"{kind}-{n}", generate_graph(kind, n, n), 0, eps


@_timed
def criterion_sssp() -> CriterionResult:
    bad = []
    progress_bad = []
    rounds_bad = []
    worst_ratio = 0.0
    count = 0
    for name, g, s, eps in sssp_instances():
        count += 1
        r = single_source_shortest_path(g, s, eps)
        d = dijkstra(g, s)
        if not (np.all(r.distances <= d * (1 + 1e-7)) and np.all(d / (1 + eps) <= r.distances)):
            bad.append(name)
        mass = [float(sum(d[v] for v in rd.remaining_before)) for rd in r.rounds] + [0.0]
        for a, b in zip(mass, mass[1:]):
            if a > 0:
                worst_ratio = max(worst_ratio, b / a)
                if b > 0.75 * a:
                    progress_bad.append(name)
        cap = 4 * math.log(g.n ** 2 * g.max_weight) / math.log(4 / 3) if g.n > 1 else 0
        if len(r.rounds) > max(cap, 1):
            rounds_bad.append(name)
    ok = not bad and not progress_bad and not rounds_bad
    return CriterionResult(4, "sssp per-node guarantee", ok,
                           {"instances": count, "distance_failures": len(bad),
                            "progress_failures": len(progress_bad),
                            "round_cap_failures": len(rounds_bad),
                            "worst_round_ratio": worst_ratio})


# ---------------------------------------------------------------- criteria 5-6


def _random_state(rng, g):
    pi = rng.normal(size=g.n)
    beta = float(rng.uniform(0.5, 8.0))
    return pi, beta


@_timed
def criterion_gradient(count: int = 100) -> CriterionResult:
    worst = 0.0
    for i in range(count):
        rng = np.random.default_rng(7000 + i)
        g = generate_graph("random-connected", int(rng.integers(3, 25)), 7000 + i,
                           lam=(None if i % 2 == 0 else 3.0))
        pi, beta = _random_state(rng, g)
        grad = aggregate(g, beta, pi).grad
        fd = np.empty(g.n)
        h = 1e-5 / beta
        for v in range(g.n):
            e = np.zeros(g.n)
            e[v] = h
            fd[v] = (potential(g, beta, pi + e) - potential(g, beta, pi - e)) / (2 * h)
        err = float(np.max(np.abs(fd - grad)) / max(np.max(np.abs(grad)), 1e-300))
        worst = max(worst, err)
    return CriterionResult(5, "finite-difference gradient", worst <= 1e-5,
                           {"triples": count, "max_relative_error": worst})


@_timed
def criterion_softmax(count: int = 100) -> CriterionResult:
    norm_worst = scale_worst = grad_scale_worst = lip_worst = flow_worst = 0.0
    for i in range(count):
        rng = np.random.default_rng(8000 + i)
        d = int(rng.integers(1, 40))
        x = rng.normal(scale=3.0, size=d)
        z = rng.normal(scale=3.0, size=d)
        beta = float(rng.uniform(0.1, 20.0))
        t = float(rng.uniform(0.1, 10.0))
        gx = softmax_gradient(beta, x)
        norm_worst = max(norm_worst, float(np.abs(gx).sum()) - 1)
        a, b = softmax(t * beta, x / t), softmax(beta, x) / t
        scale_worst = max(scale_worst, abs(a - b) / max(abs(b), 1e-300))
        ga = softmax_gradient(t * beta, x / t)
        grad_scale_worst = max(grad_scale_worst, float(np.max(np.abs(ga - gx))))
        lhs = float(np.abs(gx - softmax_gradient(beta, z)).sum())
        lip_worst = max(lip_worst, lhs / (beta * float(np.max(np.abs(x - z)))))
        g = generate_graph("random-connected", int(rng.integers(2, 20)), 8000 + i,
                           lam=(None if i % 2 == 0 else 2.5))
        pi, bt = _random_state(rng, g)
        flow_worst = max(flow_worst, primal_cost(g, soft_flow(g, bt, pi)) - 1)
    ok = (norm_worst <= 1e-12 and scale_worst <= 1e-12 and grad_scale_worst <= 1e-12
          and lip_worst <= 1 and flow_worst <= 1e-12)
    return CriterionResult(6, "soft-max algebra", ok,
                           {"grad_l1_excess": norm_worst, "scaling_rel_err": scale_worst,
                            "grad_scaling_err": grad_scale_worst, "lipschitz_ratio": lip_worst,
                            "soft_flow_cost_excess": flow_worst})


# ---------------------------------------------------------------- criterion 7


def small_instances(count: int = 500):
    for i in range(count):
        rng = np.random.default_rng(9000 + i)
        n = int(rng.integers(2, 7))
        while True:
            g = generate_graph("random-connected", n, int(rng.integers(1 << 30)),
                               density=float(rng.uniform(0, 1.2)),
                               lam=(None if i % 2 == 0 else 3.0))
            if g.m <= 8:
                break
        yield g, random_demand(n, 9000 + i)


@_timed
def criterion_oracle(count: int = 500) -> CriterionResult:
    worst = 0.0
    bad_dual = 0
    for g, q in small_instances(count):
        sol = exact_transshipment(g, q)
        ref = brute_force_tree(g, q)
        worst = max(worst, abs(sol.value - ref.value) / max(1.0, abs(ref.value)))
        stretch = q_norm(incidence_apply_transpose(g, sol.potentials))
        if stretch > 1 + 1e-9 or abs(float(q @ sol.potentials) - sol.value) > 1e-9 * max(1.0, sol.value):
            bad_dual += 1
    return CriterionResult(7, "oracle vs brute-force trees", worst <= 1e-7 and bad_dual == 0,
                           {"instances": count, "max_relative_diff": worst,
                            "duality_failures": bad_dual})


# ---------------------------------------------------------------- criterion 8


@_timed
def criterion_spanner(count: int = 100) -> CriterionResult:
    stretch_bad = size_bad = repro_bad = 0
    worst = 0.0
    builds = 0
    for i in range(count):
        rng = np.random.default_rng(11000 + i)
        n = int(rng.integers(2, 61))
        g = generate_graph("random-connected", n, 11000 + i,
                           density=float(rng.uniform(0.5, 6.0)))
        ks = sorted({2, 3, max(1, math.ceil(math.log2(n)))})
        for k in ks:
            builds += 1
            sp = build_spanner(g, k)
            st = spanner_stretch(g, sp.edges)
            worst = max(worst, st / (2 * k - 1))
            if st > (2 * k - 1) * (1 + 1e-9):
                stretch_bad += 1
            if sp.size > sp.size_bound(n):
                size_bad += 1
            if not np.array_equal(build_spanner(g, k).edges, sp.edges):
                repro_bad += 1
    ok = stretch_bad == size_bad == repro_bad == 0
    return CriterionResult(8, "spanner stretch, size, determinism", ok,
                           {"builds": builds, "stretch_failures": stretch_bad,
                            "size_failures": size_bad, "reproduction_failures": repro_bad,
                            "max_stretch_over_bound": worst})


# ---------------------------------------------------------------- criterion 9


def _trace_key(res):
    return [(r.beta, r.potential, r.delta, r.dual_value, r.rescale_count, r.phi_after,
             r.accepted) for r in res.trace]


def model_instances(count: int = 50):
    for i in range(count):
        rng = np.random.default_rng(12000 + i)
        n = int(rng.integers(5, 25))
        lam = 1.5 if i % 5 == 4 else None
        g, b = generate_instance("random-connected", n, 12000 + i, lam=lam)
        yield i, g, b, (0.5, 0.25)[i % 2]


@_timed
def criterion_models(count: int = 50, shuffles: int = 10) -> CriterionResult:
    mismatch = formula_bad = space_bad = words_bad = shuffle_bad = faults = 0
    worst_space = 0.0
    for i, g, b, eps in model_instances(count):
        sp = build_spanner(g)
        direct = solve(g, b, eps, oracle=SpannerOracle(g, sp.edges, sp.alpha))
        key = _trace_key(direct)
        try:
            c, ca = simulate_clique(g, b, eps)
            streams = [simulate_stream(g, b, eps, shuffle_seed=s) for s in range(shuffles)]
        except RuntimeError:
            faults += 1
            continue
        if _trace_key(c) != key or not np.array_equal(c.y, direct.y):
            mismatch += 1
        if ca.rounds != ca.formula():
            formula_bad += 1
        if ca.per_round_words > 2:
            words_bad += 1
        for s, sa in streams:
            if sa.passes != sa.formula():
                formula_bad += 1
            used = sa.permanent_words + sa.peak_temporary_words
            worst_space = max(worst_space, used / sa.budget)
            if used > sa.budget:
                space_bad += 1
        s0 = streams[0][0]
        if _trace_key(s0) != key or not np.array_equal(s0.y, direct.y):
            mismatch += 1
        if any(_trace_key(s) != key or not np.array_equal(s.y, s0.y) for s, _ in streams[1:]):
            shuffle_bad += 1
    ok = mismatch == formula_bad == space_bad == words_bad == shuffle_bad == faults == 0
    return CriterionResult(9, "model equivalence and accounting", ok,
                           {"instances": count, "trace_mismatches": mismatch,
                            "formula_failures": formula_bad, "space_failures": space_bad,
                            "max_space_fraction": worst_space, "word_failures": words_bad,
                            "shuffle_failures": shuffle_bad, "stream_faults": faults})


# ---------------------------------------------------------------- criterion 10


@_timed
def criterion_trees(runs: int = 20, samples: int = 10_000, reps: int = 100) -> CriterionResult:
    mean_bad = 0
    worst_ratio = 0.0
    success = total = 0
    costs = []
    for i in range(runs):
        g, b = generate_instance("random-connected", 6 + i, 13000 + i)
        eps = (0.5, 0.25)[i % 2]
        r = solve(g, b, eps, oracle=ExactOracle(g))
        x1 = soft_flow(g, r.beta_final, r.pi)
        dag = _dag(g, x1)
        z = dag[0]
        rng = np.random.default_rng(14000 + i)
        flows = np.empty((samples, g.m))
        for j in range(samples):
            flows[j] = sample_forest(g, x1, rng, dag).flow
        mean = flows.mean(axis=0)
        se = flows.std(axis=0) / math.sqrt(samples)
        dev = np.abs(mean - z)
        # choices rarer than ~1/samples never show up in the sample, so the
        # empirical SE misses them; each moves an arc by at most max |S_v|
        reach = 0.5 * float(np.abs(incidence_apply(g, x1)).sum())
        tol = 4 * se + 3 * reach / samples + 1e-12 * max(1.0, float(np.abs(z).max()))
        if np.any(dev > tol):
            mean_bad += 1
        worst_ratio = max(worst_ratio, float(np.max(dev / tol)))
        for seed in range(reps):
            total += 1
            try:
                sample_tree(g, x1, eps, seed)
                success += 1
            except RuntimeError:
                pass
        costs.append(float(np.mean([sample_forest(g, x1, rng, dag).cost for _ in range(200)])))
    rate = success / total
    return CriterionResult(10, "tree sampling", mean_bad == 0 and rate >= 0.99,
                           {"runs": runs, "mean_failures": mean_bad, "max_deviation_over_tolerance": worst_ratio,
                            "tree_success_rate": rate,
                           # x1 routes the gradient at cost 1; this is the sampled mean
                           "max_mean_forest_cost": max(costs)})


# ---------------------------------------------------------------- criterion 11


@_timed
def criterion_start(count: int = 50) -> CriterionResult:
    from .descent import symmetrized_start

    bad = 0
    worst = 0.0
    for i in range(count):
        rng = np.random.default_rng(15000 + i)
        n = int(rng.integers(5, 40))
        g, b = generate_instance("random-connected", n, 15000 + i,
                                 lam=float(rng.uniform(1.25, 4)))
        opt = exact_transshipment(g, b).value
        q_star = 1.0 / opt
        for oracle in (ExactOracle(g), make_oracle(g)):
            pi0 = symmetrized_start(g, b, oracle)
            q0 = q_norm(incidence_apply_transpose(g, pi0))
            ratio = q0 / (oracle.alpha * g.lam * q_star)
            worst = max(worst, ratio)
            if ratio > 1 + 1e-9:
                bad += 1
    return CriterionResult(11, "asymmetric start quality", bad == 0,
                           {"instances": count, "violations": bad,
                            "max_ratio_to_bound": worst})


# ---------------------------------------------------------------- suites


SUITES = ("duality", "sssp", "gradient", "softmax", "oracle", "spanner", "models", "trees",
          "start", "all")


def run_suite(name: str) -> list[CriterionResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    out = []
    if name in ("duality", "all"):
        runs = duality_runs()
        out += [criterion_duality(runs), criterion_decrement(runs), criterion_iterations(runs)]
    single = {"sssp": criterion_sssp, "gradient": criterion_gradient,
              "softmax": criterion_softmax, "oracle": criterion_oracle,
              "spanner": criterion_spanner, "models": criterion_models,
              "trees": criterion_trees, "start": criterion_start}
    for key, fn in single.items():
        if name in (key, "all"):
            out.append(fn())
    return sorted(out, key=lambda r: r.number)
