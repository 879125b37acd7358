import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import i0

from linkm import config, curves, quadrature as qd
from linkm.quadrature import Estimate


def test_periodic_integral_spectral():
    est = qd.periodic_integral(lambda t: np.exp(np.cos(t)))
    assert est.converged
    assert est.value == pytest.approx(2 * np.pi * i0(1.0), abs=1e-12)


def test_estimate_arithmetic():
    a, b = Estimate(2.0, 0.3), Estimate(-1.0, 0.4)
    s = a + b
    assert s.value == 1.0 and s.stderr == pytest.approx(0.5)
    p = qd.product(a, b, 2.0)
    assert p.value == -4.0 and p.stderr == pytest.approx(2 * math.hypot(2 * 0.4, 1 * 0.3))
    z = Estimate.exact_zero("vanishing prefactor")
    assert z.value == 0.0 and z.stderr == 0.0 and z.skip_reason


def test_block_rng_streams():
    a = qd.block_rng(1, "V", 0).random(4)
    assert np.array_equal(a, qd.block_rng(1, "V", 0).random(4))
    assert not np.array_equal(a, qd.block_rng(1, "b", 0).random(4))
    assert not np.array_equal(a, qd.block_rng(1, "V", 1).random(4))


def _radial_mass(density):
    return quad(lambda r: 4 * np.pi * r * r * density(r), 0, np.inf, limit=200)[0]


def test_proposal_components_are_normalized():
    c = np.zeros(3)
    m1 = _radial_mass(lambda r: qd.cauchy3_density(np.array([[r, 0, 0]]), c, 0.7)[0])
    m2 = _radial_mass(lambda r: qd.radial_kernel_density(np.array([[r, 0, 0]]), 0.3)[0])
    assert m1 == pytest.approx(1.0, abs=1e-9) and m2 == pytest.approx(1.0, abs=1e-9)


@pytest.fixture(scope="module")
def sampler():
    link = curves.preset("hopf_plus_far_circle")
    return qd.link_sampler(link, config.QUICK, budget=1 << 14)


def test_mc_volume_gaussian_and_determinism(sampler):
    s = 0.8
    f = lambda x: np.exp(-np.sum(x * x, 1) / (2 * s * s))
    exact = (2 * np.pi) ** 1.5 * s ** 3
    e1 = qd.mc_volume(f, sampler, 11)
    e2 = qd.mc_volume(f, sampler, 11)
    e3 = qd.mc_volume(f, sampler, 12)
    assert e1.value == e2.value and e1.stderr == e2.stderr
    assert e1.value != e3.value
    assert abs(e1.value - exact) < 4 * e1.stderr
    assert e1.stderr < 0.05 * exact


def test_mc_volume_vector_output(sampler):
    f = lambda x: np.stack([np.exp(-np.sum(x * x, 1)), 2 * np.exp(-np.sum(x * x, 1))])
    a, b = qd.mc_volume(f, sampler, 3)
    assert b.value == pytest.approx(2 * a.value, rel=1e-12)


def test_pair_volume_with_diagonal_singularity(sampler):
    """int int g(x) g(y) / |x - y|^2 = (2 pi s^2)^3 / (2 s^2) for g = exp(-|x|^2 / 2 s^2)."""
    s = 0.7

    def f(x, y):
        g = np.exp(-(np.sum(x * x, 1) + np.sum(y * y, 1)) / (2 * s * s))
        return g / np.sum((x - y) ** 2, 1)

    exact = (2 * np.pi * s * s) ** 3 / (2 * s * s)
    est = qd.mc_pair_volume(f, sampler, 5, budget=1 << 15)
    assert abs(est.value - exact) < 4 * est.stderr
    assert est.stderr < 0.1 * exact


def test_target_stderr_stops_early(sampler):
    f = lambda x: np.exp(-np.sum(x * x, 1))
    sp = sampler.with_(target_stderr=10.0, budget=1 << 16)
    est = qd.mc_volume(f, sp, 1)
    assert est.converged and est.n_samples == 4 * sp.block_size


def test_mixture_weights_validated(sampler):
    with pytest.raises(ValueError):
        sampler.with_(tube_weight=1.0, broad_weight=0.0)
