"""
Named contributions to the three-component invariant M and their assembly.

Index conventions are 1-based and cyclic: ``(i, j)`` is the integer linking
number of components i and j, and ``P_ab`` is the linking prefactor of the
alpha field ``A_a x A_b`` for the cyclically ordered pairs 12, 23, 31:

    P_12 = (2,3)(3,1),   P_23 = (3,1)(1,2),   P_31 = (1,2)(2,3).

Volume integrals over R^3 and R^3 x R^3 are importance-sampled Monte Carlo;
curve integrals are trapezoid rules on the uniform parameter grid with the
half-grid difference as error proxy.  A term whose integer prefactor vanishes,
or whose scalar potential is identically zero, is returned as an exact zero
before anything is sampled.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .config import Config
from .curves import TWO_PI, Link3
from .gauge import (MultivaluedPotential, ScalarPotentialTable, build_multivalued, build_phi,
                    marked_point_bracket)
from .linking import LinkingMatrix, linking_matrix
from .potentials import CurveSet, link_curveset, triple_product
from .quadrature import Estimate, link_sampler, mc_pair_volume, mc_volume

FOUR_PI = 4.0 * np.pi
ROUNDOFF = 64 * np.finfo(float).eps

B_LABELS = ("1;1,2", "1;1,3", "2;2,3", "2;2,1", "3;3,1", "3;3,2", "1;2,3", "2;3,1", "3;1,2")
C_LABELS = ("1;1", "2;2", "3;3", "1;2", "2;3", "3;1")
PAIRS = ((1, 2), (2, 3), (3, 1))
W_BLOCKS = (("12", "12"), ("23", "23"), ("31", "31"), ("12", "23"), ("23", "31"), ("31", "12"))


def _cyc(i: int) -> int:
    return (i - 1) % 3 + 1


def _pair_of(a: int, b: int) -> tuple:
    """Cyclically ordered version ``(p, p+1)`` of the unordered pair ``{a, b}``."""
    a, b = _cyc(a), _cyc(b)
    return (a, b) if b == _cyc(a + 1) else (b, a)


def parse_label(label: str):
    head, tail = label.split(";")
    return (int(head),) + tuple(int(s) for s in tail.split(","))


# ------------------------------------------------------------ context

class TermContext:
    """Linking numbers, potentials and samplers shared by all terms of one link."""

    def __init__(self, link: Link3, cfg: Config | None = None, seed: int | None = None,
                 lk: LinkingMatrix | None = None):
        self.link = link
        self.cfg = cfg or Config()
        self.seed = self.cfg.seed if seed is None else int(seed)
        self.lk = lk if lk is not None else linking_matrix(link, self.cfg.lk_tol, self.cfg.lk_max_nodes)
        self._mv: dict = {}
        self._phi: dict = {}
        self._V: Estimate | None = None
        self._phi_override: dict = {}

    # linking prefactors ------------------------------------------------
    def L(self, i: int, j: int) -> int:
        return self.lk(i, j)

    def P(self, a: int, b: int) -> int:
        """Prefactor of ``A_a x A_b`` in the F field (cyclic pair ``(a, a+1)``)."""
        a, b = _pair_of(a, b)
        return self.L(b, _cyc(b + 1)) * self.L(_cyc(b + 1), a)

    # potentials --------------------------------------------------------
    def multivalued(self, i: int, j: int) -> MultivaluedPotential:
        """``phi_{j,i}`` on component ``i`` (1-based)."""
        key = (_cyc(i), _cyc(j))
        if key not in self._mv:
            self._mv[key] = build_multivalued(self.link, key[0] - 1, key[1] - 1, self.cfg.grid_size,
                                              self.cfg.curve_order, self.cfg.kernel_power)
        return self._mv[key]

    def phi(self, i: int) -> ScalarPotentialTable:
        """Mean-zero scalar potential ``phi_i`` (1-based)."""
        i = _cyc(i)
        if i in self._phi_override:
            return self._phi_override[i]
        if i not in self._phi:
            w1, w2 = self.L(i + 2, i), self.L(i, i + 1)
            mv = None
            if w1 or w2:
                mv = (self.multivalued(i, i + 1), self.multivalued(i, i + 2))
            self._phi[i] = build_phi(self.link, i - 1, self.lk, "mean_zero", self.cfg.grid_size,
                                     multivalued=mv, order=self.cfg.curve_order,
                                     kernel_power=self.cfg.kernel_power)
        return self._phi[i]

    def force_phi(self, i: int, values) -> None:
        """Replace ``phi_i`` by given grid values (used to probe linearity in phi)."""
        base = self.phi(i)
        self._phi_override[_cyc(i)] = ScalarPotentialTable(base.i, base.nodes, np.asarray(values, float),
                                                           "forced")

    def phi_is_zero(self, i: int) -> bool:
        return not np.any(self.phi(i).values)

    def all_phi(self):
        return [self.phi(i) for i in (1, 2, 3)]

    @property
    def is_split(self) -> bool:
        """Bounding balls of the components pairwise disjoint (a sufficient split test)."""
        balls = []
        for c in self.link:
            _, P, _ = c.nodes(512)
            ctr = P.mean(axis=0)
            balls.append((ctr, np.linalg.norm(P - ctr, axis=1).max()))
        for a in range(3):
            for b in range(a + 1, 3):
                if np.linalg.norm(balls[a][0] - balls[b][0]) <= balls[a][1] + balls[b][1]:
                    return False
        return True

    def target(self, running: float = 0.0) -> float:
        return self.cfg.target_rel_stderr * max(1.0, abs(running))

    # shared volume factor ------------------------------------------------
    def V(self, target: float = 0.0) -> Estimate:
        """``int <A_1, A_2, A_3> dx``, computed once and shared by the f and e terms."""
        if self._V is None:
            s = link_sampler(self.link, self.cfg, target_stderr=target)
            self._V = mc_volume(lambda b: triple_product(b.fields.A[0], b.fields.A[1], b.fields.A[2]),
                                s, self.seed, "V", takes_batch=True)
        return self._V


def _deterministic(full: float, half: float, scale: float) -> Estimate:
    """Curve-rule value with the half-grid difference (floored at roundoff) as error."""
    return Estimate(float(full), float(max(abs(full - half), ROUNDOFF * scale)), converged=True)


def _skip(reason: str) -> Estimate:
    return Estimate.exact_zero(reason)


# ------------------------------------------------------------ W

def w_prefactors(ctx: TermContext) -> dict:
    """Integer prefactor of each of the six W blocks (cross blocks carry the factor 2)."""
    out = {}
    for p, q in W_BLOCKS:
        a, b = int(p[0]), int(q[0])
        f = ctx.P(a, a + 1) * ctx.P(b, b + 1)
        out[f"{p},{q}"] = f if p == q else 2 * f
    return out


def term_W(ctx: TermContext, budget: int | None = None, target: float = 0.0):
    """Gauss double integral of the F field, split into its six blocks.

    All non-zero blocks are estimated from one stream of sample pairs so the
    block estimates are correlated; the returned total is the Monte Carlo
    estimate of the summed integrand, whose standard error is exact.
    Returns ``(W, blocks)``.
    """
    pref = w_prefactors(ctx)
    live = [k for k, v in pref.items() if v != 0] if ctx.cfg.short_circuit else list(pref)
    blocks = {k: _skip("vanishing linking prefactor") for k in pref if k not in live}
    if not live:
        return _skip("vanishing linking prefactor"), blocks
    idx = {"12": (0, 1), "23": (1, 2), "31": (2, 0)}
    s = link_sampler(ctx.link, ctx.cfg, budget=ctx.cfg.pair_budget if budget is None else budget,
                     target_stderr=target)

    order = ("12", "23", "31")

    def rows_from(S_or_vals, get):
        rows = []
        for k in live:
            p, q = k.split(",")
            v = get(p, q) if p == q else 0.5 * (get(p, q) + get(q, p))
            rows.append(pref[k] * v)
        rows.append(np.sum(rows, axis=0))
        return np.array(rows)

    def f(pb):
        Ax, Ay = pb.x.fields.A, pb.y.fields.A
        alpha_x = {k: np.cross(Ax[i], Ax[j]) for k, (i, j) in idx.items()}
        alpha_y = {k: np.cross(Ay[i], Ay[j]) for k, (i, j) in idx.items()}
        r = pb.x.x - pb.y.x
        inv = 1.0 / (FOUR_PI * np.linalg.norm(r, axis=1) ** 3)
        return rows_from(None, lambda p, q: triple_product(alpha_x[p], alpha_y[q], r) * inv)

    def pair_sum(batch, delta):
        A = batch.fields.A
        w = np.where(batch.excluded, 0.0, 1.0 / batch.density)
        AL = np.stack([np.cross(A[i], A[j]) * w[:, None] for i, j in (idx[k] for k in order)])
        S = _kernels.pair_gauss_sum(np.ascontiguousarray(batch.x), np.ascontiguousarray(AL), delta)
        S = S / FOUR_PI
        return rows_from(None, lambda p, q: S[order.index(p), order.index(q)])

    ests = mc_pair_volume(f, s, ctx.seed, "W", takes_batch=True, pair_sum=pair_sum)
    for k, e in zip(live, ests[:-1]):
        blocks[k] = e
    return ests[-1], {k: blocks[k] for k in pref}


# ------------------------------------------------------------ b

def b_prefactor(ctx: TermContext, label: str) -> int:
    i, a, b = parse_label(label)
    return -ctx.P(a, b) * ctx.L(i + 1, i + 2)


def term_b_all(ctx: TermContext, budget: int | None = None, target: float = 0.0, labels=B_LABELS):
    """All requested b terms from one volume stream.  Returns ``(sum, {label: Estimate})``."""
    out = {}
    live = []
    for lab in labels:
        i = parse_label(lab)[0]
        if ctx.cfg.short_circuit and b_prefactor(ctx, lab) == 0:
            out[lab] = _skip("vanishing linking prefactor")
        elif ctx.cfg.short_circuit and ctx.phi_is_zero(i):
            out[lab] = _skip("scalar potential identically zero")
        else:
            live.append(lab)
    if not live:
        return _skip("all b terms vanish"), {k: out[k] for k in labels}
    s = link_sampler(ctx.link, ctx.cfg, phi=ctx.all_phi(),
                     budget=ctx.cfg.volume_budget if budget is None else budget, target_stderr=target)

    def f(batch):
        A, Aphi = batch.fields.A, batch.fields.Aphi
        rows = []
        for lab in live:
            i, a, b = parse_label(lab)
            pa, pb = _pair_of(a, b)
            rows.append(b_prefactor(ctx, lab) * triple_product(A[pa - 1], A[pb - 1], Aphi[i - 1]))
        rows.append(np.sum(rows, axis=0))
        return np.array(rows)

    ests = mc_volume(f, s, ctx.seed, "b", takes_batch=True)
    for lab, e in zip(live, ests[:-1]):
        out[lab] = e
    return ests[-1], {k: out[k] for k in labels}


def term_b(label: str, ctx: TermContext, budget: int | None = None, target: float = 0.0) -> Estimate:
    """A single b term on its own stream."""
    if label not in B_LABELS:
        raise KeyError(f"unknown b label {label!r}")
    _, d = term_b_all(ctx, budget, target, labels=(label,))
    return d[label]


# ------------------------------------------------------------ c and d

def c_prefactor(ctx: TermContext, label: str) -> int:
    i, j = parse_label(label)
    if i == j:
        return ctx.L(i + 1, i + 2) ** 2
    return 2 * ctx.L(i + 1, i + 2) * ctx.L(i + 2, i)


def d_prefactor(ctx: TermContext, label: str) -> int:
    i, j = parse_label(label)
    if i == j:
        return -ctx.L(i + 1, i + 2) ** 2
    return ctx.L(i + 2, i) * ctx.L(i + 1, i + 2)


def _curve_rule(vals: np.ndarray) -> Estimate:
    n = len(vals)
    full = TWO_PI * vals.mean()
    half = TWO_PI * vals[::2].mean()
    return _deterministic(full, half, TWO_PI * np.abs(vals).mean())


def _self_pair(ctx: TermContext, i: int):
    """Diagonal c and d integrals (without prefactor) by the self Gauss double sum."""
    phi = ctx.phi(i).values
    curve = ctx.link[i - 1]
    res = []
    for n in (len(phi), len(phi) // 2):
        step = len(phi) // n
        _, P, T = curve.nodes(n)
        w = phi[::step]
        KW = _kernels.self_gauss_apply(P, T, np.stack([w, np.ones(n)], axis=1)) / FOUR_PI
        h2 = (TWO_PI / n) ** 2
        res.append((h2 * float(w @ KW[:, 0]), h2 * float((w * w) @ KW[:, 1]),
                    h2 * float(np.abs(w) @ np.abs(KW[:, 0])), h2 * float((w * w) @ np.abs(KW[:, 1]))))
    (c_full, d_full, c_sc, d_sc), (c_half, d_half, _, _) = res
    return _deterministic(c_full, c_half, c_sc), _deterministic(d_full, d_half, d_sc)


def _cross_integrand(ctx: TermContext, i: int, j: int, weighted: bool) -> np.ndarray:
    """Integrand on the grid of component ``j``: ``phi_j (xdot_j, A_i^phi)`` when
    ``weighted`` else ``phi_j^2 (xdot_j, A_i)``."""
    phi_j = ctx.phi(j).values
    _, P, T = ctx.link[j - 1].nodes(len(phi_j))
    cs = CurveSet([ctx.link[i - 1]], ctx.cfg.curve_order, kernel_power=ctx.cfg.kernel_power,
                  phi=[ctx.phi(i)] if weighted else None)
    fv = cs.evaluate(P)
    if weighted:
        return phi_j * np.einsum("mk,mk->m", T, fv.Aphi[0])
    return phi_j ** 2 * np.einsum("mk,mk->m", T, fv.A[0])


def term_c(label: str, ctx: TermContext) -> Estimate:
    i, j = parse_label(label)
    pref = c_prefactor(ctx, label)
    if ctx.cfg.short_circuit:
        if pref == 0:
            return _skip("vanishing linking prefactor")
        if ctx.phi_is_zero(i) or ctx.phi_is_zero(j):
            return _skip("scalar potential identically zero")
    t0 = time.perf_counter()
    if i == j:
        raw = _self_pair(ctx, i)[0]
    else:
        # c_{i;i+1} integrates phi_{i+1} (xdot_{i+1}, A_i^phi) along component i+1
        raw = _curve_rule(_cross_integrand(ctx, i, j, weighted=True))
    out = raw.scaled(pref)
    out.wall_time = time.perf_counter() - t0
    return out


def term_d(label: str, ctx: TermContext) -> Estimate:
    i, j = parse_label(label)
    pref = d_prefactor(ctx, label)
    if ctx.cfg.short_circuit:
        if pref == 0:
            return _skip("vanishing linking prefactor")
        if ctx.phi_is_zero(j):
            return _skip("scalar potential identically zero")
    t0 = time.perf_counter()
    if i == j:
        raw = _self_pair(ctx, i)[1]
    else:
        raw = _curve_rule(_cross_integrand(ctx, i, j, weighted=False))
    out = raw.scaled(pref)
    out.wall_time = time.perf_counter() - t0
    return out


# ------------------------------------------------------------ f and e

@dataclass
class CurveFactor:
    """Marked-point statistics of the f-term curve integral on one component."""

    average: Estimate
    spread: float                 # max - min over marked points on the grid
    at_zero: float                # value with the marked point at t = 0


def f_curve_factor(ctx: TermContext, i: int) -> CurveFactor:
    """``int_{L_i} (xdot_i, A_{i+2} phi_{i+1,i} - A_{i+1} phi_{i+2,i})`` with both
    multivalued potentials vanishing at the marked point, averaged over marked
    points on the grid.  The half-grid average gives the error proxy."""
    mb, mc = ctx.multivalued(i, i + 1), ctx.multivalued(i, i + 2)
    G = marked_point_bracket(mb, mc, mb.nodes)
    half_b = MultivaluedPotential(mb.i, mb.j, mb.nodes[::2], mb.density[::2], mb.values[::2], 0.0)
    half_c = MultivaluedPotential(mc.i, mc.j, mc.nodes[::2], mc.density[::2], mc.values[::2], 0.0)
    Gh = marked_point_bracket(half_b, half_c, half_b.nodes)
    scale = TWO_PI * (np.abs(mb.density).mean() * np.abs(mc.values).mean()
                      + np.abs(mc.density).mean() * np.abs(mb.values).mean())
    avg = _deterministic(float(G.mean()), float(Gh.mean()), scale)
    return CurveFactor(avg, float(G.max() - G.min()), float(G[0]))


def term_f(i: int, ctx: TermContext, target: float = 0.0) -> Estimate:
    """``f_i = -2 * (curve factor) * V``."""
    if ctx.cfg.short_circuit and ctx.is_split:
        return _skip("split link")
    cf = f_curve_factor(ctx, i).average
    V = ctx.V(target)
    val = -2.0 * cf.value * V.value
    err = 2.0 * math.hypot(cf.value * V.stderr, V.value * cf.stderr)
    return Estimate(val, err, V.n_samples, V.n_excluded_singular, V.converged, V.seed, "",
                    V.bias_warning, V.wall_time)


def e_prefactor(ctx: TermContext) -> int:
    return -2 * ctx.L(1, 2) * ctx.L(2, 3) * ctx.L(3, 1)


def term_e(ctx: TermContext, target: float = 0.0) -> Estimate:
    pref = e_prefactor(ctx)
    if ctx.cfg.short_circuit and pref == 0:
        return _skip("vanishing linking prefactor")
    V = ctx.V(target)
    return Estimate(pref * V.value ** 2, abs(2 * pref * V.value) * V.stderr, V.n_samples,
                    V.n_excluded_singular, V.converged, V.seed, "", V.bias_warning, V.wall_time)


# ------------------------------------------------------------ assembly

@dataclass
class TermBreakdown:
    """Every named contribution to M, the total and the linking numbers."""

    W: Estimate
    b: dict
    c: dict
    d: dict
    f: dict
    e: Estimate
    M: Estimate
    lk: tuple
    W_blocks: dict = field(default_factory=dict)
    V: Estimate | None = None
    f_curve: dict = field(default_factory=dict)
    seed: int = 0
    wall_time: float = 0.0

    @property
    def diagonal_identity(self) -> dict:
        """``c_{i;i} + d_{i;i}`` with the combined error, per component."""
        out = {}
        for i in (1, 2, 3):
            lab = f"{i};{i}"
            c, d = self.c[lab], self.d[lab]
            out[i] = (c.value + d.value, math.hypot(c.stderr, d.stderr))
        return out

    def to_dict(self, timings: bool = True) -> dict:
        def est(e: Estimate):
            d = e.to_dict()
            if not timings:
                d.pop("wall_time")
            return d

        out = {
            "lk": list(self.lk),
            "seed": self.seed,
            "M": est(self.M),
            "W": est(self.W),
            "W_blocks": {k: est(v) for k, v in self.W_blocks.items()},
            "b": {k: est(v) for k, v in self.b.items()},
            "c": {k: est(v) for k, v in self.c.items()},
            "d": {k: est(v) for k, v in self.d.items()},
            "f": {str(k): est(v) for k, v in self.f.items()},
            "e": est(self.e),
            "V": None if self.V is None else est(self.V),
            "f_curve_factor": {str(k): {"average": est(v.average), "spread": v.spread,
                                        "at_marked_point_0": v.at_zero}
                               for k, v in self.f_curve.items()},
        }
        if timings:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)


def assemble_M(link: Link3, cfg: Config | None = None, seed: int | None = None,
               ctx: TermContext | None = None) -> TermBreakdown:
    """Compute every term and sum

        M = W + sum of the nine b + sum_i (c_{i;i+1} + d_{i;i+1} + f_i) + e.

    The diagonal c and d terms are evaluated for the ``c_{i;i} = -d_{i;i}``
    check only.  Monte Carlo streams (W, b, V) are independent, so their
    variances add; the f and e terms share V and enter through their joint
    derivative in V.
    """
    t0 = time.perf_counter()
    ctx = ctx or TermContext(link, cfg, seed)
    cfg = ctx.cfg
    c = {lab: term_c(lab, ctx) for lab in C_LABELS}
    d = {lab: term_d(lab, ctx) for lab in C_LABELS}
    off = ("1;2", "2;3", "3;1")
    running = sum(c[k].value + d[k].value for k in off)

    split = cfg.short_circuit and ctx.is_split
    f_curve = {} if split else {i: f_curve_factor(ctx, i) for i in (1, 2, 3)}
    need_V = (not split) or e_prefactor(ctx) != 0 or not cfg.short_circuit
    V = ctx.V(ctx.target(running)) if need_V else None
    f = {i: term_f(i, ctx) for i in (1, 2, 3)}
    e = term_e(ctx)
    running += sum(v.value for v in f.values()) + e.value

    B, b = term_b_all(ctx, target=ctx.target(running))
    running += B.value
    W, blocks = term_W(ctx, target=ctx.target(running))

    det_var = sum(c[k].stderr ** 2 + d[k].stderr ** 2 for k in off)
    value = W.value + B.value + sum(c[k].value + d[k].value for k in off) \
        + sum(v.value for v in f.values()) + e.value
    var = W.stderr ** 2 + B.stderr ** 2 + det_var
    n = W.n_samples + B.n_samples
    excl = W.n_excluded_singular + B.n_excluded_singular
    conv = W.converged and B.converged
    bias = W.bias_warning or B.bias_warning
    if V is not None and not V.skip_reason:
        G_sum = sum(fc.average.value for fc in f_curve.values()) if f_curve else 0.0
        dMdV = -2.0 * G_sum + 2.0 * e_prefactor(ctx) * V.value
        var += (dMdV * V.stderr) ** 2
        var += sum((2.0 * V.value * fc.average.stderr) ** 2 for fc in f_curve.values())
        n += V.n_samples
        excl += V.n_excluded_singular
        conv = conv and V.converged
        bias = bias or V.bias_warning
    wall = time.perf_counter() - t0
    M = Estimate(float(value), float(math.sqrt(var)), n, excl, conv, ctx.seed, "", bias, wall)
    if all(t.skip_reason for t in [W, B, e, *f.values(), *(c[k] for k in off), *(d[k] for k in off)]):
        M.skip_reason = "every term vanishes exactly"
    return TermBreakdown(W, b, c, d, f, e, M, ctx.lk.triple, blocks, V, f_curve, ctx.seed, wall)
