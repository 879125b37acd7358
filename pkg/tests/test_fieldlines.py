import json
import math

import numpy as np
import pytest

from linkm import config, curves, fieldlines as fl
from linkm.curves import TWO_PI


def circle_tube(a=0.1, flux=1.0, stream=(), transit="uniform"):
    return fl.Tube(curves.circle(), a, flux, stream, transit)


@pytest.fixture(scope="module")
def hopf():
    return curves.preset("hopf_plus_far_circle")


def test_divergence_free(hopf):
    fs = fl.FieldSystem.from_curves(list(hopf), 0.05, stream=(-3.0, 40.0))
    assert fs.check_divergence(32, seed=1) < 1e-10
    fs = fl.FieldSystem.from_curves(list(hopf), 0.05, stream=(-3.0,), transit="uniform")
    assert fs.check_divergence(32, seed=2) < 1e-10


def test_frame_is_orthonormal_and_closed():
    c = curves.preset("torus_2_2k(2)")[0]
    N1, N2, _ = fl.closed_frame(c)
    s = np.linspace(0, TWO_PI, 101)
    _, T = c.eval(s)
    T /= np.linalg.norm(T, axis=1)[:, None]
    n1, n2 = N1.eval(s)[0], N2.eval(s)[0]
    for u, v in ((n1, n1), (n2, n2)):
        assert np.allclose(np.einsum("ij,ij->i", u, v), 1.0, atol=1e-6)
    for u, v in ((n1, n2), (n1, T), (n2, T)):
        assert np.abs(np.einsum("ij,ij->i", u, v)).max() < 1e-6


def test_uniform_tube_period():
    tb = circle_tube()
    fs = fl.FieldSystem((tb,))
    res = fl.trace(fs, [1.0, 0.0, 0.0], 1.5 * TWO_PI / tb.f0)
    # on the axis the speed is f0 and the circumference 2 pi
    assert res.closed and res.n_transits == 1
    assert res.period == pytest.approx(TWO_PI / tb.f0, rel=1e-8)


def test_isochronous_periods_equal(hopf):
    tb = fl.Tube(hopf[0], 0.05)
    fs = fl.FieldSystem((tb,))
    expect = tb.volume / tb.flux
    for xi, eta in ((0.0, 0.0), (0.03, 0.0), (-0.01, 0.04)):
        res = fl.trace(fs, None, 1.5 * expect, tube=0, coords=[0.0, xi, eta])
        assert res.closed and res.period == pytest.approx(expect, rel=1e-8)


@pytest.mark.parametrize("p,q", [(1, 3), (2, 5)])
def test_rational_rotation_closes_after_q_transits(p, q):
    f0 = 1.0 / (math.pi * 0.1 ** 2)
    tb = circle_tube(stream=(-p * f0 / (2 * q),))
    assert tb.rotation_number(0.05) == pytest.approx(p / q, rel=1e-14)
    res = fl.trace(fl.FieldSystem((tb,)), [1.05, 0.0, 0.0], (q + 0.5) * TWO_PI / f0 * 1.2)
    assert res.closed and res.n_transits == q
    assert res.closure_error < fl.CLOSURE_FACTOR * 0.2


def test_stream_function_conserved(hopf):
    tb = fl.Tube(hopf[0], 0.05, stream=(-5.0, 300.0))
    res = fl.trace(fl.FieldSystem((tb,)), None, 20 * tb.volume, tube=0, coords=[1.0, 0.02, 0.01])
    assert res.drift < 1e-8
    assert not res.closed or res.n_transits > 1


def test_irrational_line_does_not_close():
    f0 = 1.0 / (math.pi * 0.1 ** 2)
    tb = circle_tube(stream=(-f0 * (math.sqrt(5) - 1) / 4,))
    res = fl.trace(fl.FieldSystem((tb,)), [1.05, 0.0, 0.0], 20 * TWO_PI / f0)
    assert not res.closed


def test_closed_curve_fit_fidelity():
    f0 = 1.0 / (math.pi * 0.1 ** 2)
    tb = circle_tube(stream=(-f0 / 6,))
    res = fl.trace(fl.FieldSystem((tb,)), [1.04, 0.0, 0.03], 4 * TWO_PI / f0, stop_at_closure=True)
    c = res.closed_curve()
    t = res.period * np.linspace(0, 1, 157)
    err = np.linalg.norm(c.eval(TWO_PI * t / res.period)[0] - res.at(t), axis=1).max()
    assert err < 1e-6
    c.validate()


def test_locate_round_trip(hopf):
    fs = fl.FieldSystem.from_curves(list(hopf), 0.05)
    q = np.array([1.3, 0.02, -0.01])
    x = fs.tubes[1].position(*q)[0]
    k, q2 = fs.locate(x)
    assert k == 1 and np.allclose(q2, q, atol=1e-12)
    with pytest.raises(fl.FieldError):
        fs.locate([50.0, 50.0, 50.0])


def hopf_link_value(fs, T_periods=24):
    x0 = fs.tubes[0].position(0.0, 0.01, 0.02)[0]
    y0 = fs.tubes[1].position(0.0, -0.02, 0.0)[0]
    per = fs.tubes[0].volume
    return fl.asymptotic_linking(fs, x0, y0, T_periods * per, n_checkpoints=8)


def test_asymptotic_linking_hopf(hopf):
    lk = -1  # Gauss linking of the first pair of the preset
    fs = fl.FieldSystem.from_curves(list(hopf), 0.05, stream=(-2.0 * (math.sqrt(2) - 1),))
    ce = hopf_link_value(fs)
    assert ce.limit == pytest.approx(lk, rel=0.02)
    assert abs(ce.values[-1] - lk) < 0.02


def test_asymptotic_linking_far_tubes(hopf):
    fs = fl.FieldSystem.from_curves(list(hopf), 0.05)
    x0 = fs.tubes[0].position(0.0, 0.01, 0.0)[0]
    z0 = fs.tubes[2].position(0.0, 0.0, 0.01)[0]
    ce = fl.asymptotic_linking(fs, x0, z0, 16 * fs.tubes[0].volume, n_checkpoints=4)
    assert abs(ce.limit) < 1e-3 and abs(ce.values[-1]) < 1e-3


def test_asymptotic_linking_invariant_under_motion(hopf):
    stream = (-2.0 * (math.sqrt(2) - 1),)
    fs = fl.FieldSystem.from_curves(list(hopf), 0.05, stream=stream)
    m = curves.RigidMotion.random(np.random.default_rng(4), 1.0, 2.0)
    moved = fl.FieldSystem.from_curves(list(curves.transform(hopf, m)), 0.05, stream=stream)
    a, b = hopf_link_value(fs, 12), hopf_link_value(moved, 12)
    assert b.values[-1] == pytest.approx(a.values[-1], abs=1e-6)


def test_cesaro_extrapolation():
    T = np.array([1.0, 2.0, 4.0, 8.0])
    ce = fl.cesaro(T, 3.0 + 0.5 / T)
    assert ce.limit == pytest.approx(3.0, abs=1e-12)
    assert ce.lower == pytest.approx(3.0625) and ce.upper == pytest.approx(3.125)
    with pytest.raises(ValueError):
        fl.cesaro([2.0, 1.0], [0.0, 0.0])


def test_flux_uniform_start_density():
    tb = fl.Tube(curves.preset("torus_2_2k(2)")[0], 0.05)
    rng = np.random.default_rng(0)
    q = np.array([fl.flux_uniform_start(tb, rng) for _ in range(4000)])
    rho = np.hypot(q[:, 1], q[:, 2])
    assert rho.max() <= tb.radius
    # first moments of f-weighted uniform disc: E[xi] = a^2 lam1 / (4 lam0)
    e_xi = tb.radius ** 2 * tb.lam[1] / (4 * tb.lam[0])
    assert abs(q[:, 1].mean() - e_xi) < 4 * tb.radius / 2 / math.sqrt(4000)


CHEAP = config.QUICK.with_(volume_budget=2048, pair_budget=2048)


def test_ergodic_unlinked_is_zero():
    link = curves.preset("unlink_separated")
    fs = fl.FieldSystem.from_curves(list(link), 0.02)
    res = fl.ergodic_M(fs, 3, 11, CHEAP)
    assert res.n_skipped == 0 and res.estimate.value == 0.0
    assert res.values == [0.0, 0.0, 0.0]


def test_ergodic_non_returning_field_raises(hopf):
    f0 = 1.0 / (math.pi * 0.02 ** 2)
    fs = fl.FieldSystem.from_curves(list(hopf), 0.02, stream=(-f0 * (math.sqrt(5) - 1) / 4,),
                                    transit="uniform")
    with pytest.raises(fl.ReturnConditionError):
        fl.ergodic_M(fs, 2, 0, CHEAP, max_transits=4)


def test_ergodic_argument_errors(hopf):
    with pytest.raises(fl.FieldError):
        fl.ergodic_M(fl.FieldSystem.from_curves(list(hopf)[:2], 0.02), 1, 0)
    with pytest.raises(fl.FieldError):
        fl.ergodic_M(fl.FieldSystem.from_curves(list(hopf), 0.02), 1, 0, weighting="volume")


def test_triple_seeds_are_distinct():
    s = {fl.triple_seed(5, i) for i in range(100)}
    assert len(s) == 100 and fl.triple_seed(5, 3) == fl.triple_seed(5, 3)


def test_json_round_trip(hopf, tmp_path):
    fs = fl.FieldSystem.from_curves(list(hopf), 0.05, flux=2.0, stream=(-1.0, 3.0), transit="uniform")
    p = tmp_path / "field.json"
    p.write_text(fs.dumps())
    back = fl.FieldSystem.load(p)
    assert back.dumps() == fs.dumps()
    assert back.tubes[1].stream == (-1.0, 3.0) and back.tubes[2].transit == "uniform"


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d.update(schema="other"), "schema"),
    (lambda d: d.update(tubes={}), "list"),
    (lambda d: d["tubes"][0].pop("radius"), "radius"),
    (lambda d: d["tubes"][0].update(transit="wobbly"), "transit"),
    (lambda d: d["tubes"][0].update(radius=-1.0), "positive"),
])
def test_json_errors(hopf, mutate, msg):
    d = fl.FieldSystem.from_curves(list(hopf), 0.05).to_dict()
    mutate(d)
    with pytest.raises(fl.FieldError, match=msg):
        fl.FieldSystem.from_dict(json.loads(json.dumps(d)))


def test_geometry_errors(hopf):
    with pytest.raises(fl.FieldError, match="overlap"):
        fl.FieldSystem.from_curves([hopf[0], hopf[0]], 0.05)
    with pytest.raises(fl.FieldError, match="focal"):
        fl.Tube(curves.circle(radius=0.1), 0.2)
    with pytest.raises(fl.FieldError):
        fl.FieldSystem(())
