"""
Acceptance checks shared by ``linkm suite`` and the test-suite.

Every check returns :class:`Check` records carrying the measured value, the
tolerance it was held to and a pass flag.  Wall-clock figures are kept out of
``detail`` so that report bodies are byte-identical across reruns.
"""

from __future__ import annotations

import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import curves, gauge, linking, terms
from .config import FULL, QUICK, Config
from .curves import TWO_PI, RigidMotion
from .fieldlines import FieldSystem, asymptotic_linking, ergodic_M
from .potentials import CurveSet
from .quadrature import link_sampler, mc_volume, periodic_integral

ALL_PRESETS = ("hopf_plus_far_circle", "borromean", "unlink_separated", "torus_2_2k(1)",
               "torus_2_2k(2)", "torus_2_2k(3)", "chain_3")
WITNESS = "torus_2_2k(2)"
BEYOND_PAIR = ("borromean", "unlink_separated")


@dataclass(frozen=True)
class Level:
    name: str
    cfg: Config
    family_budget: int          # volume and pair budget per invariance member
    n_triples: int
    tube_radius: float
    triple_budget: int
    transits: int               # asymptotic linking horizon in line periods
    engine_budget: int


LEVELS = {
    "quick": Level("quick", QUICK, 1 << 14, 16, 0.02, 1 << 13, 100, 1 << 14),
    "full": Level("full", FULL, 1 << 17, 32, 0.02, 1 << 15, 200, 1 << 17),
}


@dataclass
class Check:
    criterion: int
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: dict = field(default_factory=dict)
    note: str = ""
    timed: bool = False          # measured value is a wall-clock figure

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.criterion:>2} {self.name}: measured {self.measured:.4g} (tolerance {self.tolerance:.4g})"

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "name": self.name, "passed": bool(self.passed),
                "measured": None if self.timed else float(self.measured), "tolerance": float(self.tolerance),
                "detail": self.detail, "note": self.note}


class Context:
    """Shared state for one suite run: level, seed, cached M values, timings."""

    def __init__(self, level: str = "quick", seed: int | None = None, cfg: Config | None = None):
        if level not in LEVELS:
            raise ValueError(f"unknown level {level!r}")
        self.level = LEVELS[level]
        self.cfg = cfg or self.level.cfg
        self.seed = self.cfg.seed if seed is None else int(seed)
        self._M = {}
        self.timings = {}

    def M(self, name: str, cfg: Config | None = None, link=None) -> terms.TermBreakdown:
        cfg = cfg or self.cfg
        key = (name, cfg)
        if key not in self._M:
            self._M[key] = terms.assemble_M(link or curves.preset(name), cfg, self.seed)
        return self._M[key]


def _comb(*errs) -> float:
    return math.sqrt(sum(e * e for e in errs))


# ---------------------------------------------------------------- 1-4: linking and gauge

def check_integer_linking(ctx: Context) -> list:
    out = []
    worst, slowest, detail = 0.0, 0.0, {}
    for name in ALL_PRESETS:
        link = curves.preset(name)
        for i, j in linking.PAIRS:
            t0 = time.perf_counter()
            g = linking.gauss_linking(link[i], link[j], tol=ctx.cfg.lk_tol, n_max=ctx.cfg.lk_max_nodes)
            c = linking.crossing_sign_linking(link[i], link[j])
            slowest = max(slowest, time.perf_counter() - t0)
            dev = abs(g.value - c)
            worst = max(worst, dev)
            detail[f"{name} {i + 1}{j + 1}"] = [round(g.value, 12), int(c)]
    ctx.timings["lk_slowest_pair_s"] = slowest
    out.append(Check(1, "gauss vs crossing-sign linking, all presets", worst < 1e-4, worst, 1e-4, detail))
    out.append(Check(1, "linking runtime per pair (s)", slowest < 5.0, slowest, 5.0, timed=True))
    return out


def circulation_estimate(link, i: int, j: int, cfg: Config):
    cs = CurveSet([link[j]], cfg.curve_order, kernel_power=cfg.kernel_power)
    ci = link[i]

    def f(t):
        P, T = ci.eval(t)
        return np.einsum("mk,mk->m", cs.evaluate(P).A[0], T)

    return periodic_integral(f, tol=1e-11, n0=64, n_max=1 << 14)


def check_circulation(ctx: Context) -> list:
    worst_ratio, detail, ok = 0.0, {}, True
    floor = 1e-10
    for name in ALL_PRESETS:
        link = curves.preset(name)
        for i, j in linking.PAIRS:
            g = linking.gauss_linking(link[i], link[j], tol=ctx.cfg.lk_tol, n_max=ctx.cfg.lk_max_nodes)
            if round(g.value) == 0:
                continue
            for a, b in ((i, j), (j, i)):
                c = circulation_estimate(link, a, b, ctx.cfg)
                err = max(3.0 * (c.stderr + g.stderr), floor)
                dev = abs(c.value - g.value)
                worst_ratio = max(worst_ratio, dev / err)
                ok &= dev <= err
                detail[f"{name} A{b + 1} along {a + 1}"] = [c.value, g.value, err]
    return [Check(2, "circulation equals Gauss linking (deviation / allowance)", ok, worst_ratio, 1.0, detail,
                  "allowance is 3x the combined quadrature error, floored at 1e-10")]


def check_periodicity(ctx: Context) -> list:
    worst_inc, worst_mean = 0.0, 0.0
    rng = np.random.default_rng(ctx.seed)
    grid = ctx.cfg.grid_size
    for name in ALL_PRESETS:
        link = curves.preset(name)
        lk = linking.linking_matrix(link)
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                mv = gauge.build_multivalued(link, i, j, grid, ctx.cfg.curve_order, ctx.cfg.kernel_power)
                t = rng.uniform(0, TWO_PI, 8)
                inc = mv.lifted(t + TWO_PI) - mv.lifted(t)
                worst_inc = max(worst_inc, float(np.abs(inc - lk.lk[i, j]).max()))
            phi = gauge.build_phi(link, i, lk, "mean_zero", grid, order=ctx.cfg.curve_order)
            worst_mean = max(worst_mean, abs(phi.mean))
    return [Check(3, "lifted potential increment equals lk", worst_inc < 1e-6, worst_inc, 1e-6),
            Check(3, "mean-zero gauge mean", worst_mean < 1e-9, worst_mean, 1e-9)]


def check_gauge_average(ctx: Context) -> list:
    worst = 0.0
    grid = ctx.cfg.grid_size
    for name in ALL_PRESETS:
        link = curves.preset(name)
        lk = linking.linking_matrix(link)
        for i in range(3):
            w1, w2 = gauge.phi_weights(lk.lk, i)
            if w1 == 0 and w2 == 0:
                continue
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            mvs = (gauge.build_multivalued(link, i, i1, grid, ctx.cfg.curve_order),
                   gauge.build_multivalued(link, i, i2, grid, ctx.cfg.curve_order))
            mean_zero = gauge.build_phi(link, i, lk, "mean_zero", grid, multivalued=mvs)
            avg = gauge.average_over_marked_points(
                lambda p: gauge.build_phi(link, i, lk, "marked_point", grid, marked_point=p,
                                          multivalued=mvs).values, grid=512)
            worst = max(worst, float(np.abs(avg - mean_zero.values).max()))
    return [Check(4, "marked-point average equals mean-zero potential", worst < 1e-8, worst, 1e-8)]


# ---------------------------------------------------------------- 5-6: exact zeros, diagonal

def check_exact_zeros(ctx: Context) -> list:
    out = []
    no_sc = ctx.cfg.with_(short_circuit=False)
    for name in ("unlink_separated", "borromean"):
        br = ctx.M(name)
        exact = br.M.value == 0.0 and br.M.stderr == 0.0
        note = "" if exact else "the f terms carry no linking prefactor, so nothing forces them to vanish"
        out.append(Check(5, f"{name}: M exactly 0 with short-circuit", exact, abs(br.M.value), 0.0,
                         {"M": br.M.value, "stderr": br.M.stderr}, note))
        br2 = ctx.M(name, no_sc)
        val, err = abs(br2.M.value), br2.M.stderr
        ok = val < 1e-9 and val <= max(3.0 * err, 1e-9)
        out.append(Check(5, f"{name}: |M| < 1e-9 without short-circuit", ok, val, 1e-9,
                         {"M": br2.M.value, "stderr": err}, note))
    return out


def check_diagonal(ctx: Context) -> list:
    br = ctx.M("hopf_plus_far_circle")
    out = []
    for i, (v, e) in br.diagonal_identity.items():
        tol = 3.0 * e
        out.append(Check(6, f"hopf_plus_far_circle: c{i}{i} + d{i}{i}", abs(v) <= tol, abs(v), tol))
    return out


# ---------------------------------------------------------------- 7-9: symmetry, invariance, separation

def check_mirror(ctx: Context) -> list:
    base = ctx.M(WITNESS)
    link = curves.preset(WITNESS)
    mir = ctx.M(WITNESS + " mirror", link=curves.mirror(link))
    s = base.M.value + mir.M.value
    tol = 3.0 * _comb(base.M.stderr, mir.M.stderr)
    detail = {"M": base.M.value, "M_mirror": mir.M.value, "stderr": base.M.stderr,
              "stderr_mirror": mir.M.stderr}
    distinct = abs(base.M.value) > 3.0 * base.M.stderr
    return [Check(7, f"{WITNESS}: M distinguishable from 0 (|M| / 3 stderr)", distinct,
                  abs(base.M.value) / (3.0 * base.M.stderr), 1.0),
            Check(7, f"{WITNESS}: M(mirror) + M", abs(s) <= tol, abs(s), tol, detail)]


def invariance_families(seed: int) -> dict:
    link = curves.preset(WITNESS)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x8]))
    amp = 0.2 * link.separation_lower_bound
    fams = {"isotopy": curves.isotopy_family(link, seed, amp, 5)}

    def profile(k, eps, ph):
        return lambda u: 1.0 + eps * np.sin(k * u + ph)

    rep = []
    for _ in range(5):
        shifts = rng.uniform(0, TWO_PI, 3)
        profs = [profile(int(rng.integers(1, 3)), 0.3, rng.uniform(0, TWO_PI)) for _ in range(3)]
        rep.append(curves.reparametrize_link(link, shifts, profs, order=24))
    fams["reparametrization"] = rep
    fams["rigid motion"] = [curves.transform(link, RigidMotion.random(rng, 1.0, 2.0)) for _ in range(5)]
    fams["scale"] = [curves.transform(link, RigidMotion(scale=s)) for s in (0.5, 0.8, 1.25, 2.0, 3.0)]
    return fams


def family_deviation(values, errs):
    """Largest ``|M_k - mean| / (3 sqrt(s_k^2 + s_mean^2))`` with the inverse-variance mean."""
    v, e = np.asarray(values), np.asarray(errs)
    w = 1.0 / e ** 2
    mean = float(w @ v / w.sum())
    s_mean = math.sqrt(1.0 / w.sum())
    ratio = np.abs(v - mean) / (3.0 * np.sqrt(e ** 2 + s_mean ** 2))
    return float(ratio.max()), mean


def check_invariance(ctx: Context) -> list:
    b = ctx.level.family_budget
    cfg = ctx.cfg.with_(volume_budget=b, pair_budget=b)
    out = []
    for fam, members in invariance_families(ctx.seed).items():
        vals, errs = [], []
        for k, link in enumerate(members):
            br = terms.assemble_M(link, cfg, ctx.seed)
            vals.append(br.M.value)
            errs.append(br.M.stderr)
        ratio, mean = family_deviation(vals, errs)
        out.append(Check(8, f"{WITNESS} {fam} family: max deviation / (3 combined stderr)", ratio <= 1.0,
                         ratio, 1.0, {"M": vals, "stderr": errs, "mean": mean}))
    return out


def check_beyond_pairwise(ctx: Context) -> list:
    a, b = (curves.preset(n) for n in BEYOND_PAIR)
    la, lb = linking.linking_matrix(a), linking.linking_matrix(b)
    same = bool(np.array_equal(la.lk, lb.lk))
    ma, mb = ctx.M(BEYOND_PAIR[0]), ctx.M(BEYOND_PAIR[1])
    d = abs(ma.M.value - mb.M.value)
    tol = 3.0 * _comb(ma.M.stderr, mb.M.stderr)
    return [Check(9, f"{BEYOND_PAIR[0]} vs {BEYOND_PAIR[1]}: identical linking matrices", same, float(same), 1.0,
                  {"lk": la.lk.tolist()}),
            Check(9, f"{BEYOND_PAIR[0]} vs {BEYOND_PAIR[1]}: |dM| / (3 combined stderr)", same and d > tol,
                  d / tol if tol > 0 else math.inf, 1.0, {"M": [ma.M.value, mb.M.value],
                                                          "stderr": [ma.M.stderr, mb.M.stderr]})]


# ---------------------------------------------------------------- 10: ergodic side

def check_ergodic(ctx: Context) -> list:
    lv = ctx.level
    link = curves.preset("hopf_plus_far_circle")
    cfg = ctx.cfg.with_(volume_budget=lv.triple_budget, pair_budget=lv.triple_budget)
    fs = FieldSystem.from_curves(list(link), lv.tube_radius)
    erg = ergodic_M(fs, lv.n_triples, ctx.seed, cfg)
    central = terms.assemble_M(link, cfg, ctx.seed)
    d = abs(erg.estimate.value - central.M.value)
    tol = 3.0 * _comb(erg.estimate.stderr, central.M.stderr)
    out = [Check(10, "ergodic M of pure-transit hopf_plus_far_circle tubes vs curve formula", d <= tol, d, tol,
                 {"ergodic": erg.estimate.value, "ergodic_stderr": erg.estimate.stderr,
                  "central": central.M.value, "central_stderr": central.M.stderr,
                  "n_triples": lv.n_triples, "skipped": erg.n_skipped})]
    hopf = FieldSystem.from_curves([link[0], link[1]], 0.1)
    lk = linking.linking_matrix(link).lk[0, 1]
    tb0, tb1 = hopf.tubes
    x0 = tb0.position(0.3, 0.04, -0.02)[0]
    y0 = tb1.position(1.7, -0.03, 0.05)[0]
    ce = asymptotic_linking(hopf, x0, y0, lv.transits * max(tb0.volume, tb1.volume))
    target = lk * tb0.flux * tb1.flux
    rel = abs(ce.values[-1] - target) / abs(target)
    out.append(Check(10, "asymptotic linking of Hopf tubes at the largest checkpoint (relative error)",
                     rel <= 0.02, rel, 0.02, {"checkpoint_values": ce.values.tolist(), "limit": ce.limit,
                                              "target": float(target)}))
    return out


# ---------------------------------------------------------------- 11: engine honesty and determinism

def closed_form_cases():
    """Twenty integrands over R^3 with known integrals: ``(name, f, exact)``."""
    cases = []
    centres = [np.array(c, dtype=float) for c in
               ((0, 0, 0), (1, 0, 0), (0.5, 0.5, 0.3), (-1, 2, 0.5), (0, 6, 0), (0.5, 6, 0.5), (2, -1, 1),
                (0, 0, 1))]
    for k, (c, s) in enumerate(zip(centres, (0.5, 1.0, 0.7, 1.5, 0.8, 0.3, 2.0, 1.2))):
        cases.append((f"gaussian {k}", lambda x, c=c, s=s: np.exp(-np.sum((x - c) ** 2, 1) / (2 * s * s)),
                      (TWO_PI) ** 1.5 * s ** 3))
    for k, (c, s) in enumerate(zip(centres[:3], (0.6, 1.0, 1.4))):
        cases.append((f"second moment {k}",
                      lambda x, c=c, s=s: np.sum((x - c) ** 2, 1) * np.exp(-np.sum((x - c) ** 2, 1) / (2 * s * s)),
                      3.0 * s ** 2 * TWO_PI ** 1.5 * s ** 3))
    for k, (c, L) in enumerate(zip(centres[3:6], (0.5, 1.0, 0.8))):
        cases.append((f"exponential {k}", lambda x, c=c, L=L: np.exp(-np.linalg.norm(x - c, axis=1) / L),
                      8.0 * math.pi * L ** 3))
    for k, c in enumerate(centres[:2]):
        cases.append((f"rational {k}", lambda x, c=c: 1.0 / (1.0 + np.sum((x - c) ** 2, 1)) ** 2, math.pi ** 2))
    for k, c in enumerate((np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.3, 0.0]))):
        cases.append((f"coulomb-gaussian {k}",
                      lambda x, c=c: np.exp(-np.sum((x - c) ** 2, 1)) / np.linalg.norm(x - c, axis=1), TWO_PI))
    for k, (c, R) in enumerate(zip(centres[6:8], (1.0, 1.5))):
        cases.append((f"ball {k}", lambda x, c=c, R=R: (np.linalg.norm(x - c, axis=1) < R).astype(float),
                      4.0 / 3.0 * math.pi * R ** 3))
    return cases


def check_engine(ctx: Context) -> list:
    link = curves.preset("hopf_plus_far_circle")
    sampler = link_sampler(link, ctx.cfg, budget=ctx.level.engine_budget)
    hits, detail = 0, {}
    cases = closed_form_cases()
    for k, (name, f, exact) in enumerate(cases):
        est = mc_volume(f, sampler, ctx.seed + k, label=f"engine {k}")
        z = abs(est.value - exact) / est.stderr
        hits += z <= 3.0
        detail[name] = [est.value, est.stderr, exact]
    return [Check(11, "closed-form integrals within 3 stderr (count of 20)", hits >= 18, hits, 18, detail)]


def cli_report_body(threads: int, seed: int, budget: int = 4096) -> str:
    env = dict(os.environ, LINKM_THREADS=str(threads))
    cmd = [sys.executable, "-m", "linkm", "m", "--preset", "chain_3", "--budget", str(budget),
           "--seed", str(seed), "--body-only"]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=False)
    if res.returncode not in (0, 3):
        raise RuntimeError(f"linkm m failed ({res.returncode}): {res.stderr[-500:]}")
    return res.stdout


def check_determinism(ctx: Context) -> list:
    bodies = [cli_report_body(n, ctx.seed) for n in (1, 2)]
    same = bodies[0] == bodies[1] and len(bodies[0]) > 0
    return [Check(11, "byte-identical report bodies with 1 and 2 workers", same, float(same), 1.0,
                  {"bytes": len(bodies[0])})]


CHECKS = {
    1: check_integer_linking,
    2: check_circulation,
    3: check_periodicity,
    4: check_gauge_average,
    5: check_exact_zeros,
    6: check_diagonal,
    7: check_mirror,
    8: check_invariance,
    9: check_beyond_pairwise,
    10: check_ergodic,
    11: lambda ctx: check_engine(ctx) + check_determinism(ctx),
}

TIME_LIMITS = {"quick": 600.0, "full": 7200.0}


def run(level: str = "quick", seed: int | None = None, criteria=None, cfg: Config | None = None,
        echo=None) -> tuple:
    """Run the selected criteria; returns ``(checks, context)``.  Criterion 12
    (suite wall time) is appended when every other criterion was run."""
    ctx = Context(level, seed, cfg)
    selected = sorted(CHECKS) if criteria is None else sorted(criteria)
    checks = []
    t0 = time.perf_counter()
    for c in selected:
        if c == 12:
            continue
        tc = time.perf_counter()
        got = CHECKS[c](ctx)
        ctx.timings[f"criterion_{c}_s"] = time.perf_counter() - tc
        for chk in got:
            checks.append(chk)
            if echo:
                echo(chk.line())
    wall = time.perf_counter() - t0
    ctx.timings["suite_s"] = wall
    if criteria is None or 12 in selected:
        lim = TIME_LIMITS[ctx.level.name]
        chk = Check(12, f"{ctx.level.name} suite wall time under {lim:.0f} s", wall < lim, wall, lim, timed=True)
        checks.append(chk)
        if echo:
            echo(chk.line())
    return checks, ctx
