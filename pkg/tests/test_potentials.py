import numpy as np
import pytest
from scipy.integrate import quad

from linkm import curves, potentials
from linkm.potentials import CurveSet, curve_potential


def axis_potential(R, z):
    """Closed form on the axis of a circle of radius R in the xy plane."""
    return R * R / (2.0 * (R * R + z * z) ** 1.5)


def quad_potential(curve, x):
    """Independent adaptive quadrature of the point kernel."""
    out = []
    for k in range(3):
        def f(t, k=k):
            p, d = curve.eval(t)
            r = np.asarray(x) - p
            return np.cross(d, r)[k] / (4 * np.pi * np.linalg.norm(r) ** 3)
        out.append(quad(f, 0, 2 * np.pi, epsabs=1e-13, epsrel=1e-13, limit=400)[0])
    return np.array(out)


@pytest.mark.parametrize("z", [0.0, 0.5, 2.0])
def test_circle_axis_closed_form(z):
    c = curves.circle(radius=1.5)
    A = curve_potential(c, [0.0, 0.0, z])
    assert np.allclose(A, [0, 0, axis_potential(1.5, z)], atol=1e-13)


@pytest.mark.parametrize("x", [[0.3, -0.2, 0.4], [1.2, 0.1, 0.05], [1.0, 0.0, 0.002]])
def test_off_axis_against_adaptive_quadrature(x):
    c = curves.ellipse((0, 0, 0), 1.3, 0.8, (1, 0, 0), (0, 0.6, 0.8))
    A, err = curve_potential(c, x, with_error=True)
    assert np.allclose(A, quad_potential(c, x), atol=1e-9)
    assert err < 1e-8


def test_point_on_curve_is_singular():
    c = curves.circle()
    with pytest.raises(potentials.SingularPointError):
        curve_potential(c, [1.0, 0.0, 0.0])


def test_circulation_is_linking_number(presets):
    link = presets["torus_2_2k(2)"]
    assert potentials.circulation(link[0], link[1], n=1024) == pytest.approx(2.0, abs=1e-9)
    assert potentials.circulation(link[2], link[0], n=1024) == pytest.approx(-1.0, abs=1e-9)


def test_alpha_field_routes_agree(presets):
    link = presets["hopf_plus_far_circle"]
    x = np.array([[0.4, 0.3, 0.6], [-0.5, 0.2, -0.3]])
    a = potentials.alpha_field(link[0], link[1], x, order=256)
    b = potentials.alpha_field(link[0], link[1], x, order=256, route="double")
    assert np.allclose(a, b, rtol=1e-10, atol=1e-13)


def test_constant_weight_scales_potential():
    c = curves.circle()
    x = [0.2, 0.1, 0.5]
    w = potentials.phi_weighted_potential(c, np.full(64, 2.5), x, order=256)
    assert np.allclose(w, 2.5 * curve_potential(c, x, order=256), atol=1e-14)


def test_tube_density_integrates_to_one():
    """The curve-averaged tube density is a probability density on R^3."""
    c = curves.circle()
    cs = CurveSet([c], 256, sigma_tube=0.3)
    rng = np.random.default_rng(1)
    # integrate over a box with uniform samples
    L = 3.0
    x = rng.uniform(-L, L, (200000, 3))
    d = cs.evaluate(x, with_dens=True).tube_density[0]
    est = d.mean() * (2 * L) ** 3
    se = d.std() * (2 * L) ** 3 / np.sqrt(len(d))
    assert abs(est - 1.0) < 4 * se + 1e-3


def test_kernel_power_two_differs():
    c = curves.circle()
    a3 = curve_potential(c, [0, 0, 0.5])
    a2 = curve_potential(c, [0, 0, 0.5], kernel_power=2.0)
    # |x - x_i| = sqrt(1.25) on the axis: the squared-norm kernel is larger by that factor
    assert a2[2] == pytest.approx(a3[2] * np.sqrt(1.25), rel=1e-12)
