"""
Point kernel, curve potentials and the alpha fields built from them.

The point kernel is

    A(x_i; x) = (1/4pi) xdot_i x (x - x_i) / |x - x_i|^p

with ``p = 3`` by default, so that the circulation of the potential of one
component along another is the Gauss linking integral.  ``p = 2`` reproduces
the literal squared norm and is available through ``kernel_power``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .curves import TWO_PI, Curve3, Link3

FOUR_PI = 4.0 * np.pi
NEAR_NODES = 8.0        # trapezoid is trusted beyond this many node spacings (times speed)


class SingularPointError(ValueError):
    """Evaluation point coincides with a source point."""


class GridMismatchError(ValueError):
    """A sampled scalar table does not sit on the uniform periodic grid."""


def kernel_A(point, tangent, x, power: float = 3.0, floor: float = 1e-13):
    """Point kernel at ``x`` (broadcasts over leading axes)."""
    r = np.asarray(x, dtype=float) - np.asarray(point, dtype=float)
    dist = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(dist < floor):
        raise SingularPointError("evaluation point within the hard floor of the source point")
    return np.cross(tangent, r) / (FOUR_PI * dist**power)


def alpha_pair(src_i, src_j, x, power: float = 3.0):
    """Cross product of the point kernels of two sources ``(point, tangent)``."""
    return np.cross(kernel_A(*src_i, x, power), kernel_A(*src_j, x, power))


def triple_product(a, b, c):
    """``det[a b c] = a . (b x c)``, broadcasting over leading axes."""
    return np.einsum("...i,...i->...", a, np.cross(b, c))


# modes of a scalar table below this fraction of its size are FFT roundoff
PHI_RTOL = 1e-14


def _fourier_coefficients(values: np.ndarray, max_order: int | None = None, rtol: float = 1e-15):
    """Real trigonometric coefficients of samples on the uniform periodic grid."""
    n = values.shape[0]
    coef = np.fft.rfft(values) / n
    if n % 2 == 0:
        coef = coef[:-1]            # drop the Nyquist mode, not representable as cos/sin pair
    ck = 2.0 * coef[1:].real
    sk = -2.0 * coef[1:].imag
    mag = np.hypot(ck, sk)
    keep = len(mag)
    if keep and mag.max() > 0:
        big = np.nonzero(mag > rtol * max(np.abs(values).max(), 1e-300))[0]
        keep = int(big[-1]) + 1 if len(big) else 0
    if max_order is not None:
        keep = min(keep, max_order)
    return coef[0].real, ck[:keep], sk[:keep]


@dataclass
class FieldValues:
    """Potentials and tube densities of the three components at a batch of points."""

    A: np.ndarray           # (3, m, 3)
    Aphi: np.ndarray        # (3, m, 3); zero where no scalar channel was supplied
    tube_density: np.ndarray  # (3, m)
    flags: np.ndarray       # (3, m) int: far / near / singular / depth-exhausted

    @property
    def singular(self) -> np.ndarray:
        return np.any(self.flags == _kernels.FLAG_SINGULAR, axis=0)

    @property
    def depth_exhausted(self) -> int:
        return int(np.count_nonzero(self.flags == _kernels.FLAG_DEPTH))


class CurveSet:
    """Compiled evaluation of curve potentials for up to three curves.

    ``phi`` optionally attaches a periodic scalar to each curve (a callable of
    ``t`` or an array sampled on the uniform grid); it weights the potential
    in ``Aphi``.
    """

    def __init__(self, curves, order: int = 512, near_floor: float | None = None,
                 kernel_power: float = 3.0, phi=None, sigma_tube: float = 1.0,
                 hard_floor: float = 1e-13, near_floor_factor: float = 1e-3):
        curves = list(curves)
        self.curves = curves
        self.order = int(order)
        self.kernel_power = float(kernel_power)
        self.sigma_tube = float(sigma_tube)
        self.hard_floor = float(hard_floor)
        phi = list(phi) if phi is not None else [None] * len(curves)
        phi_coef = [self._phi_coefficients(p) for p in phi]
        K = max([c.order for c in curves] + [len(pc[1]) for pc in phi_coef] + [1])
        nc = len(curves)
        self.C0 = np.zeros((nc, 4))
        self.CK = np.zeros((nc, 4, K))
        self.SK = np.zeros((nc, 4, K))
        for j, (c, (p0, pk, ps)) in enumerate(zip(curves, phi_coef)):
            self.C0[j, :3] = c.constant
            self.CK[j, :3, :c.order] = c.cos
            self.SK[j, :3, :c.order] = c.sin
            self.C0[j, 3] = p0
            self.CK[j, 3, :len(pk)] = pk
            self.SK[j, 3, :len(ps)] = ps
        self.KG = np.array([c.order for c in curves], dtype=np.int64)
        self.KP = np.array([len(pc[1]) for pc in phi_coef], dtype=np.int64)
        self.has_phi = np.array([p is not None for p in phi])
        self.t = TWO_PI * np.arange(self.order) / self.order
        self.NP = np.empty((nc, self.order, 3))
        self.NT = np.empty((nc, self.order, 3))
        self.NW = np.zeros((nc, self.order))
        kt = np.outer(self.t, np.arange(1, K + 1))
        cos_kt, sin_kt = np.cos(kt), np.sin(kt)
        for j, c in enumerate(curves):
            self.NP[j], self.NT[j] = c.eval(self.t)
            self.NW[j] = self.C0[j, 3] + cos_kt @ self.CK[j, 3] + sin_kt @ self.SK[j, 3]
        self.vmax = np.array([c.max_speed() for c in curves])
        h = TWO_PI / self.order
        diam = np.array([c.diameter() for c in curves])
        floor = near_floor_factor * diam if near_floor is None else np.full(nc, float(near_floor))
        self.near_floor = floor
        self.near_dist = np.maximum(floor, NEAR_NODES * self.vmax * h)

    @staticmethod
    def _phi_coefficients(p):
        if p is None:
            return 0.0, np.zeros(0), np.zeros(0)
        if callable(p):
            n = 4096
            return _fourier_coefficients(np.asarray(p(TWO_PI * np.arange(n) / n), dtype=float),
                                         rtol=PHI_RTOL)
        if hasattr(p, "values"):
            p = p.values
        return _fourier_coefficients(np.asarray(p, dtype=float), rtol=PHI_RTOL)

    def evaluate(self, X, active=None, with_dens: bool = False) -> FieldValues:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        m = X.shape[0]
        nc = len(self.curves)
        act = np.ones(nc, dtype=np.bool_) if active is None else np.asarray(active, dtype=np.bool_)
        A = np.zeros((nc, m, 3))
        AW = np.zeros((nc, m, 3))
        D = np.zeros((nc, m))
        F = np.zeros((nc, m), dtype=np.int64)
        _kernels.curve_fields(X, self.C0, self.CK, self.SK, self.KG, self.KP, self.NP, self.NT, self.NW, self.t,
                              self.vmax, self.near_dist, act, self.kernel_power, self.sigma_tube,
                              with_dens, self.hard_floor, A, AW, D, F)
        return FieldValues(A, AW, D, F)


def curve_potential(curve: Curve3, x, order: int = 512, kernel_power: float = 3.0,
                    near_floor: float | None = None, with_error: bool = False):
    """Potential of one curve at points ``x``.

    With ``with_error`` also return the largest change against the rule with
    twice as many nodes, a convergence indicator.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    cs = CurveSet([curve], order, near_floor, kernel_power)
    val = cs.evaluate(X)
    if np.any(val.singular):
        raise SingularPointError("evaluation point on the curve")
    A = val.A[0]
    if with_error:
        fine = CurveSet([curve], 2 * order, near_floor, kernel_power).evaluate(X).A[0]
        err = float(np.abs(fine - A).max())
        A = fine
    if np.ndim(x) == 1:
        A = A[0]
    return (A, err) if with_error else A


def alpha_field(Li: Curve3, Lj: Curve3, x, order: int = 512, route: str = "product",
                kernel_power: float = 3.0):
    """``A_i(x) x A_j(x)``.

    ``route="product"`` takes the cross product of the two curve potentials;
    ``route="double"`` sums the point-pair kernel over both node grids and is
    kept as an independent check on the fast path.
    """
    if Li is Lj:
        raise ValueError("alpha_field needs two distinct components")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if route == "product":
        val = CurveSet([Li, Lj], order, kernel_power=kernel_power).evaluate(X)
        out = np.cross(val.A[0], val.A[1])
    elif route == "double":
        _, Pi, Ti = Li.nodes(order)
        _, Pj, Tj = Lj.nodes(order)
        w = (TWO_PI / order) ** 2
        out = np.zeros_like(X)
        for a in range(order):
            Ka = kernel_A(Pi[a], Ti[a], X, kernel_power)
            Kb = kernel_A(Pj[:, None, :], Tj[:, None, :], X[None], kernel_power)
            out += w * np.cross(Ka[None], Kb).sum(axis=0)
    else:
        raise ValueError(f"unknown route {route!r}")
    return out[0] if np.ndim(x) == 1 else out


def phi_weighted_potential(curve: Curve3, phi_table, x, order: int = 512, kernel_power: float = 3.0):
    """Potential of ``curve`` with the scalar table ``phi_table`` as line weight."""
    values = np.asarray(getattr(phi_table, "values", phi_table), dtype=float)
    nodes = getattr(phi_table, "nodes", None)
    n = values.shape[0]
    if nodes is not None and not np.allclose(nodes, TWO_PI * np.arange(n) / n, atol=1e-12, rtol=0):
        raise GridMismatchError("scalar table is not on the uniform grid starting at t=0")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    val = CurveSet([curve], order, kernel_power=kernel_power, phi=[values]).evaluate(X)
    if np.any(val.singular):
        raise SingularPointError("evaluation point on the curve")
    out = val.Aphi[0]
    return out[0] if np.ndim(x) == 1 else out


def link_curveset(link: Link3, cfg, phi=None, sigma_tube: float | None = None) -> CurveSet:
    if sigma_tube is None:
        sigma_tube = cfg.sampler.sigma_tube_factor * link.min_separation
    return CurveSet(list(link), cfg.curve_order, kernel_power=cfg.kernel_power, phi=phi,
                    sigma_tube=sigma_tube, hard_floor=cfg.hard_floor,
                    near_floor_factor=cfg.near_floor_factor)


def circulation(curve_i: Curve3, curve_j: Curve3, n: int = 512, order: int = 512,
                kernel_power: float = 3.0) -> float:
    """Line integral of the potential of ``curve_j`` along ``curve_i`` (trapezoid, n nodes)."""
    _, P, T = curve_i.nodes(n)
    A = CurveSet([curve_j], order, kernel_power=kernel_power).evaluate(P).A[0]
    return float(np.einsum("ij,ij->", A, T) * TWO_PI / n)
