import json

import numpy as np
import pytest

from linkm import config, curves, terms
from linkm.curves import TWO_PI

CFG = config.QUICK.with_(volume_budget=1 << 13, pair_budget=1 << 13)


@pytest.fixture(scope="module")
def torus_ctx():
    return terms.TermContext(curves.preset("torus_2_2k(2)"), CFG, 3)


def test_prefactors_torus(torus_ctx):
    ctx = torus_ctx
    # lk = (2, -1, -1)
    assert (ctx.P(1, 2), ctx.P(2, 3), ctx.P(3, 1)) == (1, -2, -2)
    assert ctx.P(2, 1) == ctx.P(1, 2)
    assert terms.w_prefactors(ctx) == {"12,12": 1, "23,23": 4, "31,31": 4,
                                       "12,23": -4, "23,31": 8, "31,12": -4}
    assert terms.b_prefactor(ctx, "1;1,2") == -ctx.P(1, 2) * ctx.L(2, 3)
    assert terms.b_prefactor(ctx, "3;1,2") == -1 * 2
    assert [terms.c_prefactor(ctx, k) for k in terms.C_LABELS] == [1, 1, 4, 2, -4, -4]
    assert [terms.d_prefactor(ctx, k) for k in terms.C_LABELS] == [-1, -1, -4, 1, -2, -2]
    assert terms.e_prefactor(ctx) == -4


def test_label_helpers():
    assert terms.parse_label("2;3,1") == (2, 3, 1)
    assert terms._pair_of(3, 1) == (3, 1) and terms._pair_of(1, 3) == (3, 1)
    assert terms._pair_of(2, 1) == (1, 2)


def test_split_link_is_exactly_zero():
    br = terms.assemble_M(curves.preset("unlink_separated"), CFG, 1)
    assert br.M.value == 0.0 and br.M.stderr == 0.0
    assert br.M.skip_reason
    assert all(e.skip_reason for e in br.b.values())
    assert all(e.skip_reason for e in br.f.values())


def self_gauss_oracle(curve, phi_vals, n):
    """-1/2 int int (phi(s) - phi(t))^2 K(s, t) by a plain dense trapezoid."""
    _, P, T = curve.nodes(n)
    step = len(phi_vals) // n
    ph = phi_vals[::step]
    R = P[:, None, :] - P[None, :, :]
    r = np.linalg.norm(R, axis=-1)
    np.fill_diagonal(r, 1.0)
    trip = np.einsum("ak,abk->ab", T, np.cross(T[None, :, :], R))
    K = trip / (4 * np.pi * r ** 3)
    np.fill_diagonal(K, 0.0)
    D = (ph[:, None] - ph[None, :]) ** 2
    return -0.5 * (TWO_PI / n) ** 2 * float(np.sum(D * K))


def test_diagonal_sum_matches_difference_form(torus_ctx):
    """c_{i;i} + d_{i;i} = -1/2 L^2 int int (phi(s) - phi(t))^2 K, nonzero off the plane."""
    ctx = torus_ctx
    for i in (1, 2, 3):
        c = terms.term_c(f"{i};{i}", ctx)
        d = terms.term_d(f"{i};{i}", ctx)
        L2 = ctx.L(i + 1, i + 2) ** 2
        oracle = L2 * self_gauss_oracle(ctx.link[i - 1], ctx.phi(i).values, 512)
        assert c.value + d.value == pytest.approx(oracle, abs=1e-6)
    # frozen: the first component of torus_2_2k(2) is not planar
    c = terms.term_c("1;1", ctx)
    d = terms.term_d("1;1", ctx)
    assert c.value + d.value == pytest.approx(-0.0820, abs=5e-4)


def test_planar_diagonal_vanishes():
    ctx = terms.TermContext(curves.preset("hopf_plus_far_circle"), CFG.with_(short_circuit=False), 1)
    for i in (1, 2):
        s = terms.term_c(f"{i};{i}", ctx).value + terms.term_d(f"{i};{i}", ctx).value
        assert abs(s) < 1e-12


def test_borromean_curve_factors_frozen():
    ctx = terms.TermContext(curves.preset("borromean"), CFG, 1)
    for i in (1, 2, 3):
        cf = terms.f_curve_factor(ctx, i)
        assert cf.average.value == pytest.approx(-0.5427, abs=2e-4)
        assert cf.average.stderr < 1e-8


def test_borromean_M_is_f_terms_only():
    br = terms.assemble_M(curves.preset("borromean"), CFG, 2)
    assert br.W.value == 0.0 and br.e.value == 0.0
    assert all(v.value == 0.0 for v in br.b.values())
    f_total = sum(v.value for v in br.f.values())
    assert br.M.value == pytest.approx(f_total, rel=1e-12)
    # independent high-budget reference: M = 0.64 +- 0.02
    assert abs(br.M.value - 0.64) < 4 * np.hypot(br.M.stderr, 0.02)


def test_breakdown_json_is_deterministic():
    link = curves.preset("chain_3")
    a = terms.assemble_M(link, CFG, 9).to_json(timings=False)
    b = terms.assemble_M(link, CFG, 9).to_json(timings=False)
    assert a == b
    d = json.loads(a)
    assert set(d) >= {"M", "W", "b", "c", "d", "e", "f", "lk"}


def test_linearity_in_forced_phi(torus_ctx):
    """The off-diagonal c term is linear in phi of the weighted component."""
    ctx = terms.TermContext(torus_ctx.link, CFG, 3)
    base = terms.term_c("1;2", ctx).value
    ctx.force_phi(1, 2.0 * ctx.phi(1).values)
    assert terms.term_c("1;2", ctx).value == pytest.approx(2.0 * base, rel=1e-9)
