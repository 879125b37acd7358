"""Pairwise linking numbers: Gauss double integral and a crossing-sign count."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .curves import TWO_PI, Curve3, Link3
from .quadrature import Estimate

PAIRS = ((0, 1), (1, 2), (2, 0))


class LinkingError(RuntimeError):
    pass


def gauss_linking(Li: Curve3, Lj: Curve3, tol: float = 1e-10, n0: int = 64,
                  n_max: int = 1 << 13) -> Estimate:
    """Gauss linking integral by the doubly periodic trapezoid rule with doubling."""
    n = n0
    prev = None
    while True:
        _, Pi, Ti = Li.nodes(n)
        _, Pj, Tj = Lj.nodes(n)
        val = _kernels.gauss_double_sum(Pi, Ti, Pj, Tj) * (TWO_PI / n) ** 2 / (4.0 * np.pi)
        if prev is not None:
            delta = abs(val - prev)
            if delta < tol:
                return Estimate(float(val), float(delta), n * n, converged=True)
            if 2 * n > n_max:
                return Estimate(float(val), float(delta), n * n, converged=False)
        prev = val
        n *= 2


def _frame(direction):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return np.stack([e1, e2, d])


def crossing_sign_linking(Li: Curve3, Lj: Curve3, n_poly: int = 4096, direction=(0.31, 0.17, 0.93),
                          retries: int = 10, seed: int = 7) -> int:
    """Half the signed crossing count of the projected polygons (an exact integer).

    Degenerate projections are retried along randomly perturbed directions.
    """
    _, Pi, _ = Li.nodes(n_poly)
    _, Pj, _ = Lj.nodes(n_poly)
    rng = np.random.default_rng(seed)
    d = np.asarray(direction, dtype=float)
    for _ in range(retries + 1):
        F = _frame(d)
        total, degenerate = _kernels.projected_crossings(Pi @ F.T, Pj @ F.T, 1e-9)
        if not degenerate:
            if total % 2:
                raise LinkingError("odd signed crossing count between closed polygons")
            return total // 2
        d = d + 1e-2 * rng.standard_normal(3)
    raise LinkingError(f"projection stayed degenerate after {retries} retries")


@dataclass
class LinkingMatrix:
    """Integer pairwise linking numbers with the raw Gauss values."""

    lk: np.ndarray                                      # 3x3 int, diagonal 0
    raw: np.ndarray                                     # 3x3 float, diagonal nan
    residual: np.ndarray = field(default=None)          # |raw - round(raw)|
    crossing: np.ndarray | None = None                  # 3x3 int from the crossing route

    def __post_init__(self):
        if self.residual is None:
            with np.errstate(invalid="ignore"):
                self.residual = np.abs(self.raw - np.round(self.raw))

    def __call__(self, i: int, j: int) -> int:
        """Linking number of components ``i`` and ``j`` (1-based, cyclic mod 3)."""
        return int(self.lk[(i - 1) % 3, (j - 1) % 3])

    @property
    def triple(self) -> tuple:
        return self(1, 2), self(2, 3), self(3, 1)

    def to_dict(self) -> dict:
        out = {
            "lk": self.lk.tolist(),
            "raw": [[None if np.isnan(v) else float(v) for v in row] for row in self.raw],
            "max_residual": float(np.nanmax(self.residual)),
        }
        if self.crossing is not None:
            out["crossing"] = self.crossing.tolist()
        return out

    @classmethod
    def from_integers(cls, l12: int, l23: int, l31: int) -> "LinkingMatrix":
        lk = np.zeros((3, 3), dtype=int)
        for (i, j), v in zip(PAIRS, (l12, l23, l31)):
            lk[i, j] = lk[j, i] = v
        raw = lk.astype(float)
        np.fill_diagonal(raw, np.nan)
        return cls(lk, raw)


def linking_matrix(link: Link3, tol: float = 1e-10, n_max: int = 1 << 13, crossing: bool = False,
                   n_poly: int = 4096, residual_tol: float = 1e-3) -> LinkingMatrix:
    raw = np.full((3, 3), np.nan)
    for i, j in PAIRS:
        est = gauss_linking(link[i], link[j], tol=tol, n_max=n_max)
        raw[i, j] = raw[j, i] = est.value
    lk = np.zeros((3, 3), dtype=int)
    off = ~np.eye(3, dtype=bool)
    lk[off] = np.round(raw[off]).astype(int)
    res = LinkingMatrix(lk, raw)
    if np.nanmax(res.residual) > residual_tol:
        raise LinkingError(f"Gauss integral not near an integer (residual {np.nanmax(res.residual):.2e})")
    if crossing:
        cr = np.zeros((3, 3), dtype=int)
        for i, j in PAIRS:
            cr[i, j] = cr[j, i] = crossing_sign_linking(link[i], link[j], n_poly)
        res.crossing = cr
    return res
