"""
Multivalued potentials along a component and the gauge-fixed periodic scalar
potentials built from them.

``phi_{j,i}`` integrates the potential of component ``j`` along component
``i`` from the marked point; it increases by ``lk(i, j)`` per turn.  The
combination

    phi_i = (i+2, i) phi_{i+1,i} - (i, i+1) phi_{i+2,i}

has cancelling increments and is single-valued.  All integrals along a
component are done spectrally on a uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import TWO_PI, Link3
from .potentials import CurveSet

LK_ROUND_TOL = 1e-3


class GaugeError(ValueError):
    pass


def _real_fourier(values: np.ndarray):
    n = len(values)
    coef = np.fft.rfft(values) / n
    if n % 2 == 0:
        coef = coef[:-1]
    k = np.arange(1, len(coef))
    return coef[0].real, 2.0 * coef[1:].real, -2.0 * coef[1:].imag, k


def _trig(t, ck, sk, k):
    kt = np.multiply.outer(np.asarray(t, dtype=float), k)
    return np.cos(kt) @ ck + np.sin(kt) @ sk


def _trig_grid(n, ck, sk):
    """Same sum on the uniform grid of ``n`` nodes (``len(ck) < n/2``), by inverse FFT."""
    spec = np.zeros(n // 2 + 1, dtype=complex)
    spec[1:len(ck) + 1] = 0.5 * n * (ck - 1j * sk)
    return np.fft.irfft(spec, n)


@dataclass
class MultivaluedPotential:
    """``phi_{j,i}`` on component ``i`` in the branch vanishing at the marked point t=0."""

    i: int
    j: int
    nodes: np.ndarray
    density: np.ndarray          # a(t) = xdot_i . A_j(x_i(t)) at the nodes
    values: np.ndarray           # branch on [0, 2 pi)
    period_increment: float
    rate: float = field(init=False)
    _ck: np.ndarray = field(init=False, repr=False)
    _sk: np.ndarray = field(init=False, repr=False)
    _k: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a0, ck, sk, k = _real_fourier(self.density)
        self.rate = a0
        # zero-mean periodic antiderivative of the oscillating part
        self._ck = -sk / k
        self._sk = ck / k
        self._k = k

    def periodic_part(self, t=None):
        """Zero-mean periodic part ``P`` of the lifted potential (on the nodes when ``t`` is None)."""
        if t is None:
            return _trig_grid(self.grid_size, self._ck, self._sk)
        return _trig(t, self._ck, self._sk, self._k)

    def lifted(self, t, marked: float = 0.0, rate: float | None = None):
        """Lift to the universal cover, vanishing at ``marked``."""
        r = self.rate if rate is None else rate
        t = np.asarray(t, dtype=float)
        return r * (t - marked) + self.periodic_part(t) - self.periodic_part(marked)

    def a(self, t):
        """Spectral interpolant of the density ``a``."""
        return self.rate + _trig(t, self._k * self._sk, -self._k * self._ck, self._k)

    @property
    def grid_size(self) -> int:
        return len(self.nodes)


def build_multivalued(link: Link3, i: int, j: int, grid_size: int = 2048, order: int = 512,
                      kernel_power: float = 3.0) -> MultivaluedPotential:
    """Integrate the potential of component ``j`` along component ``i`` (0-based)."""
    if i == j:
        raise GaugeError("phi_{j,i} needs two distinct components")
    t, P, T = link[i].nodes(grid_size)
    fv = CurveSet([link[j]], order, kernel_power=kernel_power).evaluate(P)
    if np.any(fv.singular):
        raise GaugeError(f"component {i} passes through the hard floor of component {j}")
    a = np.einsum("mk,mk->m", T, fv.A[0])
    mv = MultivaluedPotential(i, j, t, a, np.zeros(grid_size), 0.0)
    mv.period_increment = TWO_PI * mv.rate
    mv.values = mv.rate * t + mv.periodic_part() - mv.periodic_part(0.0)
    return mv


@dataclass
class ScalarPotentialTable:
    """Periodic scalar potential ``phi_i`` sampled on the uniform grid of component ``i``."""

    i: int
    nodes: np.ndarray
    values: np.ndarray
    gauge: str
    marked_point: float | None = None
    residual_rate: float = 0.0           # slope left over from the quadrature, dropped
    weights: tuple = (0, 0)

    def __call__(self, t):
        a0, ck, sk, k = _real_fourier(self.values)
        return a0 + _trig(t, ck, sk, k)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def to_dict(self) -> dict:
        return {"component": self.i + 1, "gauge": self.gauge, "marked_point": self.marked_point,
                "nodes": self.nodes.tolist(), "values": self.values.tolist()}


def phi_weights(lk, i: int):
    """Integer weights ``((i+2,i), (i,i+1))`` of ``phi_{i+1,i}`` and ``phi_{i+2,i}`` (0-based i)."""
    i1, i2 = (i + 1) % 3, (i + 2) % 3
    return int(lk[i2, i]), int(lk[i, i1])


def _check_integer(lk_raw, i, j):
    v = lk_raw[i, j]
    if abs(v - round(v)) > LK_ROUND_TOL:
        raise GaugeError(f"linking ({i + 1},{j + 1}) = {v:.6f} is not near an integer; "
                         "upstream quadrature is unconverged")


def build_phi(link: Link3, i: int, lk, gauge: str = "mean_zero", grid_size: int = 2048,
              marked_point: float = 0.0, multivalued=None, order: int = 512,
              kernel_power: float = 3.0) -> ScalarPotentialTable:
    """Gauge-fixed scalar potential of component ``i`` (0-based).

    ``lk`` is a LinkingMatrix (integers plus raw values).  ``multivalued`` may
    supply the two potentials ``(phi_{i+1,i}, phi_{i+2,i})`` already built.
    """
    i1, i2 = (i + 1) % 3, (i + 2) % 3
    _check_integer(lk.raw, i, i1)
    _check_integer(lk.raw, i, i2)
    w1, w2 = phi_weights(lk.lk, i)
    t = TWO_PI * np.arange(grid_size) / grid_size
    if w1 == 0 and w2 == 0:
        vals = np.zeros(grid_size)
        return ScalarPotentialTable(i, t, vals, gauge, marked_point if gauge == "marked_point" else None,
                                    0.0, (0, 0))
    if multivalued is None:
        multivalued = (build_multivalued(link, i, i1, grid_size, order, kernel_power),
                       build_multivalued(link, i, i2, grid_size, order, kernel_power))
    m1, m2 = multivalued
    # integer slopes cancel exactly: w1 * lk(i,i1) - w2 * lk(i,i2) = 0
    if m1.grid_size != grid_size or m2.grid_size != grid_size:
        raise GaugeError("supplied multivalued potentials use a different grid")
    periodic = w1 * m1.periodic_part() - w2 * m2.periodic_part()
    residual = w1 * m1.rate - w2 * m2.rate
    if gauge == "mean_zero":
        vals = periodic - periodic.mean()
        mp = None
    elif gauge == "marked_point":
        at_pt = w1 * m1.periodic_part(marked_point) - w2 * m2.periodic_part(marked_point)
        vals = periodic - at_pt
        mp = float(marked_point)
    else:
        raise GaugeError(f"unknown gauge {gauge!r}")
    return ScalarPotentialTable(i, t, vals, gauge, mp, float(residual), (w1, w2))


def average_over_marked_points(f, grid: int = 2048) -> float:
    """Uniform average of ``f(pt)`` over marked points ``pt = 2 pi m / grid``."""
    pts = TWO_PI * np.arange(grid) / grid
    vals = np.array([f(p) for p in pts], dtype=float)
    return float(vals.mean(axis=0)) if vals.ndim == 1 else vals.mean(axis=0)


def marked_point_bracket(mv_b: MultivaluedPotential, mv_c: MultivaluedPotential, marked):
    """Curve factor ``G(pt) = int_pt^{pt+2pi} (a_c phi_b - a_b phi_c) dt`` with both
    multivalued potentials vanishing at ``pt`` (vectorized over ``pt``).

    Closed form of the spectral integrals:
    ``G(pt) = 2 K + 4 pi (rate_b P_c(pt) - rate_c P_b(pt))``, ``K = int a_c P_b``.
    """
    if mv_b.i != mv_c.i:
        raise GaugeError("both potentials must live on the same component")
    K = TWO_PI * float(np.mean(mv_c.density * mv_b.periodic_part()))
    pt = np.asarray(marked, dtype=float)
    return 2.0 * K + 2.0 * TWO_PI * (mv_b.rate * mv_c.periodic_part(pt) - mv_c.rate * mv_b.periodic_part(pt))


def bracket_direct(mv_b: MultivaluedPotential, mv_c: MultivaluedPotential, marked: float,
                   fine: int = 1 << 16) -> float:
    """Independent route for ``G(pt)``: cumulative integration from the marked
    point on a fine grid, then trapezoid over one period."""
    s = marked + TWO_PI * np.arange(fine + 1) / fine

    def dens(mv, tt):
        a0, ck, sk, k = _real_fourier(mv.density)
        return a0 + _trig(tt, ck, sk, k)

    ab, ac = dens(mv_b, s), dens(mv_c, s)
    h = TWO_PI / fine
    phib = np.concatenate([[0.0], np.cumsum(0.5 * h * (ab[1:] + ab[:-1]))])
    phic = np.concatenate([[0.0], np.cumsum(0.5 * h * (ac[1:] + ac[:-1]))])
    g = ac * phib - ab * phic
    return float(h * (g.sum() - 0.5 * (g[0] + g[-1])))
