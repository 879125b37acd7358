import numpy as np
import pytest

from linkm import curves, gauge, linking
from linkm.curves import TWO_PI


@pytest.fixture(scope="module")
def torus():
    link = curves.preset("torus_2_2k(2)")
    return link, linking.linking_matrix(link)


def test_period_increment_is_linking_number(torus):
    link, lk = torus
    for i, j in ((0, 1), (1, 0), (0, 2), (2, 1)):
        mv = gauge.build_multivalued(link, i, j, 1024)
        t = np.array([0.1, 2.0, 5.5])
        assert np.allclose(mv.lifted(t + TWO_PI) - mv.lifted(t), lk.lk[i, j], atol=1e-10)
        assert mv.period_increment == pytest.approx(lk.lk[i, j], abs=1e-9)
        assert abs(mv.values[0]) < 1e-14


def test_density_interpolant_matches_nodes(torus):
    link, _ = torus
    mv = gauge.build_multivalued(link, 0, 1, 512)
    assert np.allclose(mv.a(mv.nodes), mv.density, atol=1e-11)


def test_phi_weights(torus):
    _, lk = torus
    # lk = (2, -1, -1): phi_1 = (3,1) phi_{2,1} - (1,2) phi_{3,1}
    assert gauge.phi_weights(lk.lk, 0) == (-1, 2)
    assert gauge.phi_weights(lk.lk, 1) == (2, -1)
    assert gauge.phi_weights(lk.lk, 2) == (-1, -1)


def test_phi_is_single_valued_and_mean_zero(torus):
    link, lk = torus
    for i in range(3):
        phi = gauge.build_phi(link, i, lk, grid_size=1024)
        assert abs(phi.mean) < 1e-12
        assert abs(phi.residual_rate) < 1e-9
        # spectral interpolant reproduces the table and is 2 pi periodic
        assert np.allclose(phi(phi.nodes), phi.values, atol=1e-11)
        assert phi(0.3) == pytest.approx(phi(0.3 + TWO_PI), abs=1e-12)


def test_marked_point_gauge_vanishes_at_point(torus):
    link, lk = torus
    phi = gauge.build_phi(link, 0, lk, "marked_point", 1024, marked_point=1.1)
    assert abs(phi(1.1)) < 1e-10


def test_gauge_average_identity(torus):
    link, lk = torus
    mvs = (gauge.build_multivalued(link, 1, 2, 512), gauge.build_multivalued(link, 1, 0, 512))
    mz = gauge.build_phi(link, 1, lk, "mean_zero", 512, multivalued=mvs)
    avg = gauge.average_over_marked_points(
        lambda p: gauge.build_phi(link, 1, lk, "marked_point", 512, marked_point=p, multivalued=mvs).values, 256)
    assert np.abs(avg - mz.values).max() < 1e-10


def test_zero_weights_give_zero_table(presets):
    link = presets["borromean"]
    phi = gauge.build_phi(link, 0, linking.linking_matrix(link), grid_size=256)
    assert not phi.values.any()


def test_non_integer_linking_rejected(torus):
    link, _ = torus
    lk = linking.LinkingMatrix.from_integers(2, -1, -1)
    lk.raw[0, 1] = lk.raw[1, 0] = 1.6
    with pytest.raises(gauge.GaugeError, match="not near an integer"):
        gauge.build_phi(link, 0, lk, grid_size=256)


def test_unknown_gauge_and_grid_mismatch(torus):
    link, lk = torus
    with pytest.raises(gauge.GaugeError):
        gauge.build_phi(link, 0, lk, "tilted", 256)
    mvs = (gauge.build_multivalued(link, 0, 1, 256), gauge.build_multivalued(link, 0, 2, 256))
    with pytest.raises(gauge.GaugeError, match="different grid"):
        gauge.build_phi(link, 0, lk, grid_size=512, multivalued=mvs)


@pytest.mark.parametrize("name", ["torus_2_2k(2)", "borromean"])
def test_bracket_closed_form_matches_cumulative_route(name, presets):
    link = presets[name]
    mv_b = gauge.build_multivalued(link, 0, 1, 1024)
    mv_c = gauge.build_multivalued(link, 0, 2, 1024)
    for pt in (0.0, 0.9, 4.0):
        closed = float(gauge.marked_point_bracket(mv_b, mv_c, pt))
        direct = gauge.bracket_direct(mv_b, mv_c, pt)
        assert closed == pytest.approx(direct, abs=1e-8)


def test_bracket_average_is_twice_cross_integral(presets):
    link = presets["borromean"]
    mv_b = gauge.build_multivalued(link, 0, 1, 1024)
    mv_c = gauge.build_multivalued(link, 0, 2, 1024)
    K = TWO_PI * np.mean(mv_c.density * mv_b.periodic_part())
    avg = gauge.average_over_marked_points(lambda p: float(gauge.marked_point_bracket(mv_b, mv_c, p)), 512)
    assert avg == pytest.approx(2 * K, abs=1e-12)
