import time

import numpy as np
import pytest

from linkm import curves, linking

# (l12, l23, l31) from the crossing-sign count, checked by hand on the drawings
EXPECTED = {
    "hopf_plus_far_circle": (-1, 0, 0),
    "borromean": (0, 0, 0),
    "unlink_separated": (0, 0, 0),
    "torus_2_2k(1)": (1, -1, -1),
    "torus_2_2k(2)": (2, -1, -1),
    "torus_2_2k(3)": (3, -1, -1),
    "chain_3": (-1, 1, 0),
}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_linking_matrix_both_routes(name, presets):
    lk = linking.linking_matrix(presets[name], crossing=True)
    assert lk.triple == EXPECTED[name]
    assert np.array_equal(lk.lk, lk.crossing)
    assert np.nanmax(lk.residual) < 1e-8


def test_gauss_linking_fast_and_converged(presets):
    link = presets["torus_2_2k(3)"]
    t0 = time.perf_counter()
    est = linking.gauss_linking(link[0], link[1])
    assert time.perf_counter() - t0 < 5.0
    assert est.converged and abs(est.value - 3) < 1e-9


def test_orientation_reversal_flips_sign(presets):
    link = presets["hopf_plus_far_circle"]
    assert linking.gauss_linking(link[0].reversed(), link[1]).value == pytest.approx(1.0, abs=1e-9)


def test_linking_matrix_call_is_cyclic():
    lk = linking.LinkingMatrix.from_integers(2, -1, 3)
    assert lk(1, 2) == 2 and lk(2, 3) == -1 and lk(3, 1) == 3 and lk(4, 5) == 2
