"""``tship`` command line: solve, sssp, spanner, oracle, sim, generate, battery.

Exit status 0 on success, 2 for input errors, 3 for numerical or
convergence failures.  ``--json`` prints a ``"schema": "tship/1"`` document.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .descent import ConvergenceError, TreeSamplingError, make_oracle, solve
from .generate import KINDS, generate_graph, random_demand
from .graph import (InstanceFormatError, format_instance, incidence_apply_transpose,
                    parse_instance, preprocess_weights, sssp_demand)
from .oracle import brute_force_tree, exact_transshipment
from .potential import DegeneratePotentialError, NumericalError, q_norm
from .spanner import build_spanner, default_k, spanner_stretch

SCHEMA = "tship/1"
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def _read(path: str, require_demand: bool = True):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return parse_instance(text, require_demand=require_demand)
    except InstanceFormatError as exc:
        where = f"{path}:{exc.line}" if getattr(exc, "line", None) else path
        raise InputError(f"{where}: {exc}") from None


def _eps(value: str) -> float:
    try:
        eps = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if not 0 < eps <= 0.5:
        raise argparse.ArgumentTypeError("epsilon must lie in (0, 0.5]")
    return eps


def _oracle_for(g, args):
    if getattr(args, "oracle", None) == "exact":
        return make_oracle(g, "exact")
    return make_oracle(g, "spanner", args.k)


def _floats(v):
    return [float(x) for x in np.asarray(v, dtype=np.float64)]


def _emit(doc: dict, args, human):
    if args.json:
        print(json.dumps({"schema": SCHEMA, **doc}, sort_keys=True))
    else:
        for key, val in human:
            print(f"{key:<22} {val}")


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "beta", "potential", "delta", "dual_value", "rescales",
                    "phi_after", "accepted"])
        for r in trace:
            w.writerow([r.index, repr(r.beta), repr(r.potential), repr(r.delta),
                        repr(r.dual_value), r.rescale_count,
                        "" if r.phi_after is None else repr(r.phi_after), int(r.accepted)])


def _trace_summary(res):
    return {"oracle_calls": res.oracle_calls, "iterations": res.iterations,
            "rescales": res.rescales}


# ---------------------------------------------------------------- commands


def cmd_solve(args):
    inst = _read(args.instance)
    g = inst.graph
    if args.preprocess:
        g = preprocess_weights(g, args.epsilon)
    oracle = _oracle_for(g, args)
    res = solve(g, inst.demand, args.epsilon, oracle=oracle, primal=args.primal or args.tree,
                tree=args.tree, seed=args.seed)
    if args.trace_csv:
        _write_trace(args.trace_csv, res.trace)
    doc = {"command": "solve", "n": g.n, "m": g.m, "epsilon": args.epsilon,
           "alpha": float(res.alpha), "lambda": float(g.lam), "value_dual": res.value_dual,
           "y": _floats(res.y), "beta_final": res.beta_final, **_trace_summary(res)}
    human = [("nodes / edges", f"{g.n} / {g.m}"), ("epsilon", args.epsilon),
             ("oracle alpha", res.alpha), ("dual value b^T y", f"{res.value_dual:.10g}"),
             ("oracle calls", res.oracle_calls), ("beta rescales", res.rescales)]
    if res.x is not None:
        doc["value_primal"] = res.value_primal
        doc["x"] = _floats(res.x)
        human.append(("primal value", f"{res.value_primal:.10g}"))
        human.append(("gap bound (1+eps)", f"{res.value_primal / res.value_dual:.6f}"
                      if res.value_dual > 0 else "n/a"))
    if res.primal_tree is not None:
        doc["tree"] = [[u + 1, v + 1] for u, v in res.primal_tree]
        doc["tree_cost"] = res.tree_cost
        human.append(("tree edges", len(res.primal_tree)))
    _emit(doc, args, human)


def cmd_sssp(args):
    from .sssp import single_source_shortest_path

    inst = _read(args.instance, require_demand=False)
    g = inst.graph
    s = args.source - 1
    if not 0 <= s < g.n:
        raise InputError(f"source {args.source} outside 1..{g.n}")
    oracle = _oracle_for(g, args)
    res = single_source_shortest_path(g, s, args.epsilon, oracle, check=args.check,
                                      inner_eps=args.inner_epsilon)
    doc = {"command": "sssp", "source": args.source, "epsilon": args.epsilon,
           "inner_epsilon": res.inner_eps, "check": res.check, "alpha": res.alpha,
           "distances": _floats(res.distances), "rounds": len(res.rounds),
           "round_cap": res.round_cap, "descent_calls": res.descent_calls,
           "fixed_per_round": [len(r.fixed) for r in res.rounds]}
    human = [("source", args.source), ("epsilon", args.epsilon), ("node test", res.check),
             ("outer rounds", f"{len(res.rounds)} (cap {res.round_cap})"),
             ("descent oracle calls", res.descent_calls)]
    human += [(f"  node {v + 1}", f"{d:.10g}") for v, d in enumerate(res.distances)]
    _emit(doc, args, human)


def cmd_spanner(args):
    inst = _read(args.instance, require_demand=False)
    g = inst.graph
    k = args.k or default_k(g.n)
    sp = build_spanner(g, k)
    stretch = spanner_stretch(g, sp.edges)
    edges = [[int(g.tail[e]) + 1, int(g.head[e]) + 1] for e in sp.edges]
    doc = {"command": "spanner", "k": k, "alpha": sp.alpha, "size": sp.size,
           "size_bound": sp.size_bound(g.n), "stretch": stretch, "passes": sp.passes,
           "broadcast_rounds": sp.broadcast_rounds, "edges": edges}
    human = [("k", k), ("stretch bound 2k-1", sp.alpha), ("measured stretch", f"{stretch:.6g}"),
             ("edges kept", f"{sp.size} of {g.m}"), ("edge scans", sp.passes)]
    _emit(doc, args, human)


def cmd_oracle(args):
    inst = _read(args.instance)
    g, b = inst.graph, inst.demand
    sol = exact_transshipment(g, b)
    doc = {"command": "oracle", "value": sol.value, "flow": _floats(sol.flow),
           "potentials": _floats(sol.potentials),
           "potential_stretch": q_norm(incidence_apply_transpose(g, sol.potentials))}
    human = [("optimal value", f"{sol.value:.10g}")]
    if g.m <= 16:
        ref = brute_force_tree(g, b)
        doc["brute_force_value"] = ref.value
        human.append(("brute-force trees", f"{ref.value:.10g}"))
    _emit(doc, args, human)


def cmd_sim(args):
    from .models import simulate_clique, simulate_stream

    inst = _read(args.instance)
    g, b = inst.graph, inst.demand
    if args.model == "clique":
        res, acc = simulate_clique(g, b, args.epsilon, args.k)
        accounting = {"rounds": acc.rounds, "per_round_words": acc.per_round_words,
                      "setup_rounds": acc.setup_rounds, "spanner_rounds": acc.spanner_rounds,
                      "iterations": acc.iterations, "rescales": acc.rescales,
                      "formula": acc.formula()}
        human = [("rounds", acc.rounds), ("formula", acc.formula()),
                 ("max words per node", acc.per_round_words)]
    else:
        res, acc = simulate_stream(g, b, args.epsilon, args.k, shuffle_seed=args.shuffle_seed,
                                   fuse_passes=args.fuse_passes)
        accounting = {"passes": acc.passes, "spanner_passes": acc.spanner_passes,
                      "iterations": acc.iterations, "rescales": acc.rescales,
                      "permanent_words": acc.permanent_words,
                      "peak_temporary_words": acc.peak_temporary_words,
                      "budget_words": acc.budget, "fused": acc.fused, "formula": acc.formula()}
        human = [("passes", acc.passes), ("formula", acc.formula()),
                 ("space words", f"{acc.permanent_words} + {acc.peak_temporary_words}"
                                 f" of {acc.budget}")]
    doc = {"command": f"sim {args.model}", "epsilon": args.epsilon,
           "value_dual": res.value_dual, "y": _floats(res.y), **_trace_summary(res),
           "accounting": accounting}
    human = [("dual value b^T y", f"{res.value_dual:.10g}")] + human
    _emit(doc, args, human)


def cmd_generate(args):
    if args.n < 1:
        raise InputError("n must be positive")
    if args.wmin < 0 or args.wmax < args.wmin:
        raise InputError("need 0 <= wmin <= wmax")
    g = generate_graph(args.kind, args.n, args.seed, wmin=args.wmin, wmax=args.wmax,
                       lam=args.lam)
    if args.demand == "sssp":
        b = sssp_demand(args.n, 0)
    else:
        b = random_demand(args.n, args.seed + 7919)
    comments = [f"generated kind={args.kind} n={args.n} seed={args.seed}"]
    text = format_instance(g, b, comments)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_battery(args):
    from .battery import run_suite

    results = run_suite(args.suite)
    if args.json:
        items = [r.as_dict() for r in results]
        if not args.timings:
            for item in items:
                item.pop("seconds")
        print(json.dumps({"schema": SCHEMA, "command": "battery", "suite": args.suite,
                          "passed": all(r.passed for r in results), "criteria": items},
                         sort_keys=True))
    else:
        for r in results:
            print(r.line())


# ---------------------------------------------------------------- parser


def _add_oracle_flags(p):
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--k", type=int, default=None, help="spanner parameter (default ceil(log2 n))")
    grp.add_argument("--oracle", choices=("exact", "spanner"), default="spanner")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tship", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="(1+eps)-approximate transshipment")
    s.add_argument("instance")
    s.add_argument("--epsilon", type=_eps, required=True)
    _add_oracle_flags(s)
    s.add_argument("--primal", action="store_true", help="also recover a primal flow")
    s.add_argument("--tree", action="store_true", help="sample a tree solution")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--preprocess", action="store_true",
                   help="scale integer weights to w -> 1 + ceil(n/eps) w first")
    s.add_argument("--trace-csv", metavar="PATH")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sssp", help="(1+eps)-approximate single-source distances")
    s.add_argument("instance")
    s.add_argument("--source", type=int, required=True, help="1-based source node")
    s.add_argument("--epsilon", type=_eps, required=True)
    _add_oracle_flags(s)
    s.add_argument("--check", choices=("flow", "delta"), default="flow")
    s.add_argument("--inner-epsilon", type=float, default=None)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_sssp)

    s = sub.add_parser("spanner", help="build a (2k-1)-spanner")
    s.add_argument("instance")
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_spanner)

    s = sub.add_parser("oracle", help="exact transshipment value")
    s.add_argument("instance")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("sim", help="replay the solver in a computation model")
    s.add_argument("model", choices=("clique", "stream"))
    s.add_argument("instance")
    s.add_argument("--epsilon", type=_eps, required=True)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--shuffle-seed", type=int, default=0)
    s.add_argument("--fuse-passes", action=argparse.BooleanOptionalAction, default=True,
                   help="evaluate potential and gradient in one pass (stream only)")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("generate", help="write a seeded instance")
    s.add_argument("--kind", choices=KINDS, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--wmin", type=int, default=1)
    s.add_argument("--wmax", type=int, default=20)
    s.add_argument("--lam", type=float, default=None, help="asymmetry factor for backward weights")
    s.add_argument("--demand", choices=("random", "sssp"), default="random")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("battery", help="run an acceptance battery")
    s.add_argument("--suite", default="all")
    s.add_argument("--json", action="store_true")
    s.add_argument("--timings", action="store_true", help="include wall-clock seconds")
    s.set_defaults(func=cmd_battery)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        status = args.func(args)
    except (InputError, InstanceFormatError) as exc:
        print(f"tship: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, ConvergenceError, TreeSamplingError,
            DegeneratePotentialError) as exc:
        print(f"tship: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"tship: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return int(status or 0)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
