"""Norms, the soft-max and the potential Phi_beta(pi) = lse_beta(R_* A^T pi).

Two evaluation paths exist.  ``potential`` and ``soft_flow`` use an ordinary
stable log-sum-exp and are the most accurate.  ``aggregate`` is the
per-node evaluation used by the solver and by the simulated models: each arc
term ``exp(beta*s - shift)`` is rounded to a fixed-point integer and summed
per node.  Integer sums do not depend on summation order, so a node, a
stream chunk or a full sweep over the edge list all obtain bit-identical
sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .graph import ArcSystem, incidence_apply_transpose


class DegeneratePotentialError(ValueError):
    """The potential has no positive stretch (pi is constant)."""


class NumericalError(ArithmeticError):
    """A fixed-point aggregate left its exactness budget."""


def p_norm(v) -> float:
    """Sum of positive parts."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum(np.maximum(v, 0.0)))


def q_norm(v) -> float:
    """Largest positive part, 0 for the empty vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    return max(0.0, float(np.max(v)))


def softmax(beta: float, v) -> float:
    """``(1/beta) * ln(sum_i exp(beta * v_i))`` evaluated without overflow."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("soft-max of an empty vector")
    if not beta > 0:
        raise ValueError("beta must be positive")
    z = beta * v
    c = float(np.max(z))
    return (c + math.log(float(np.sum(np.exp(z - c))))) / beta


def softmax_gradient(beta: float, v) -> np.ndarray:
    """Gradient of ``softmax(beta, .)`` at v: a probability vector."""
    v = np.asarray(v, dtype=np.float64)
    z = beta * v
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def potential(g: ArcSystem, beta: float, pi) -> float:
    return softmax(beta, incidence_apply_transpose(g, pi))


def soft_flow(g: ArcSystem, beta: float, pi) -> np.ndarray:
    """Arc flow ``R_*^T grad lse``: arc a carries p_a / w_a.

    The net inflow of the result equals the gradient of the potential.
    """
    p = softmax_gradient(beta, incidence_apply_transpose(g, pi))
    m = g.m
    return np.concatenate((p[:m] / g.w_plus, p[m:] / g.w_minus))


def fixed_point_bits(m: int) -> int:
    """Fractional bits for arc terms bounded by 2, so that 2m of them fit in int64."""
    return 62 - math.ceil(math.log2(4 * max(m, 1)))


@njit(cache=True)
def accumulate_arcs(idx, tail, head, wp, wm, pi, beta, shift, scale, sig, sigw):
    """Add the fixed-point arc terms of the edges ``idx`` into per-node sums.

    Returns ``(max stretch over the processed arcs, overflow flag)``.
    The backward arc of an edge runs head -> tail, so its term is credited
    to ``tail``.
    """
    mx = -np.inf
    overflow = False
    for j in range(idx.size):
        e = idx[j]
        t = tail[e]
        h = head[e]
        d = pi[h] - pi[t]
        sf = d / wp[e]
        sb = -d / wm[e]
        if sf > mx:
            mx = sf
        if sb > mx:
            mx = sb
        tf = math.exp(beta * sf - shift)
        tb = math.exp(beta * sb - shift)
        if tf > 2.0 or tb > 2.0:
            overflow = True
            continue
        sig[h] += np.int64(math.floor(tf * scale + 0.5))
        sig[t] += np.int64(math.floor(tb * scale + 0.5))
        qf = np.int64(math.floor(tf / wp[e] * scale + 0.5))
        qb = np.int64(math.floor(tb / wm[e] * scale + 0.5))
        sigw[h] += qf - qb
        sigw[t] += qb - qf
    return mx, overflow


_ARANGE = {}


def _all_edges(m):
    idx = _ARANGE.get(m)
    if idx is None:
        idx = _ARANGE[m] = np.arange(m, dtype=np.int64)
    return idx


@dataclass
class AggregateReport:
    """Per-node soft-max aggregates at (beta, pi).

    ``sigma[v]`` and ``sigma_w[v]`` are the fixed-point sums of
    ``exp(beta*s_a - shift)`` over arcs entering v, and of the same terms
    divided by the arc weight (entering minus leaving).  ``total`` is their
    global sum; ``phi`` and ``grad`` follow from these integers alone.
    """

    beta: float
    shift: float
    bits: int
    sigma: np.ndarray
    sigma_w: np.ndarray
    total: int
    phi: float
    grad: np.ndarray
    max_stretch: float


@njit(cache=True)
def _finalize(sigma, sigma_w, shift, beta, bits):
    total = np.int64(0)
    for v in range(sigma.size):
        total += sigma[v]
    s = float(total)
    phi = (shift + math.log(s) - bits * math.log(2.0)) / beta
    grad = np.empty(sigma_w.size)
    for v in range(sigma_w.size):
        grad[v] = float(sigma_w[v]) / s
    return total, phi, grad


def finalize_aggregate(beta, shift, bits, sigma, sigma_w, max_stretch) -> AggregateReport:
    """Turn the integer per-node sums into Phi and its gradient."""
    total, phi, grad = _finalize(sigma, sigma_w, float(shift), float(beta), bits)
    if total <= 0:
        raise NumericalError("all soft-max terms underflowed")
    return AggregateReport(beta, shift, bits, sigma, sigma_w, int(total), phi, grad, max_stretch)


def aggregate(g: ArcSystem, beta: float, pi, shift: float | None = None) -> AggregateReport:
    """Evaluate the per-node aggregates over all edges.

    With ``shift=None`` the shift is ``beta`` times the exact largest stretch.
    A caller-provided shift must keep every term below 2.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    if shift is None:
        shift = beta * float(np.max(incidence_apply_transpose(g, pi))) if g.m else 0.0
    bits = fixed_point_bits(g.m)
    sig = np.zeros(g.n, dtype=np.int64)
    sigw = np.zeros(g.n, dtype=np.int64)
    mx, overflow = accumulate_arcs(_all_edges(g.m), g.tail, g.head,
                                   g.w_plus, g.w_minus, pi, float(beta), float(shift),
                                   float(2.0 ** bits), sig, sigw)
    if overflow:
        raise NumericalError("arc term above the fixed-point budget; shift too small")
    return finalize_aggregate(beta, shift, bits, sig, sigw, mx)


def gradient(g: ArcSystem, beta: float, pi) -> AggregateReport:
    """Gradient of the potential via the per-node aggregates (see ``aggregate``)."""
    return aggregate(g, beta, pi)


def beta_window(g: ArcSystem, eps: float) -> tuple[float, float]:
    """Bounds ``(4 ln 2m, 5 ln 2m)`` for ``eps * beta * Phi``."""
    L = math.log(2 * g.m)
    return 4 * L, 5 * L


def in_beta_window(g: ArcSystem, eps: float, beta: float, phi: float) -> bool:
    lo, hi = beta_window(g, eps)
    return lo < eps * beta * phi <= hi


def find_initial_beta(g: ArcSystem, pi, eps: float, max_stretch: float | None = None) -> float:
    """Return beta with ``4 ln 2m < eps*beta*Phi_beta(pi) <= 5 ln 2m``.

    Since ``M <= Phi_beta <= M + ln(2m)/beta`` for the largest stretch M,
    ``beta = (4.5 - eps/2) ln(2m) / (eps M)`` lands inside the window for
    eps < 1.  The value is re-checked; a bisection on the convex map
    ``beta -> eps*beta*Phi_beta`` covers the remaining cases.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if g.m == 0:
        raise DegeneratePotentialError("graph without edges")
    if max_stretch is None:
        max_stretch = float(np.max(incidence_apply_transpose(g, pi)))
    if not max_stretch > 0:
        raise DegeneratePotentialError("potential is constant; no positive stretch")
    L = math.log(2 * g.m)
    lo, hi = 4 * L, 5 * L

    def f(beta):
        return eps * beta * potential(g, beta, pi)

    beta = (4.5 - eps / 2) * L / (eps * max_stretch)
    if eps < 1 and lo < f(beta) <= hi:
        return beta
    # f(0+) = eps*ln(2m) < 4 ln(2m) and f is convex, so it crosses the
    # window once on the way up
    a, b = 0.0, max(beta, 1e-300)
    while f(b) <= lo:
        a, b = b, 2 * b
    for _ in range(200):
        mid = 0.5 * (a + b)
        val = f(mid)
        if lo < val <= hi:
            return mid
        if val <= lo:
            a = mid
        else:
            b = mid
    raise NumericalError("initial beta search did not converge")
