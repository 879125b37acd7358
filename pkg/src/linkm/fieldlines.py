"""
Magnetic lines of analytic divergence-free fields in thin solid tori.

Each tube is the image of the map

    x(s, xi, eta) = gamma(s) + xi N1(s) + eta N2(s),   xi^2 + eta^2 <= a^2,

where ``(N1, N2)`` is a rotation-minimizing normal frame, twisted uniformly
so that it closes up.  In these coordinates the field is

    J B^s = f(xi, eta),   J B^xi = psi_eta,   J B^eta = -psi_xi,

with ``J`` the Jacobian of the map and ``psi`` a function of ``xi^2 + eta^2``.
Since ``J B`` has zero coordinate divergence the Cartesian field is
divergence-free for any smooth frame, and it is tangent to the boundary
because ``psi`` is constant on circles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import _kernels
from .config import Config
from .curves import TWO_PI, Curve3, Link3
from .quadrature import Estimate

SCHEMA = "linkm-field-v1"
FRAME_GRID = 4096
CLOSURE_FACTOR = 1e-7          # closure tolerance = factor * tube diameter
FIT_TOL = 1e-6
TRANSITS = ("uniform", "isochronous")


class FieldError(ValueError):
    """Invalid field description, or a field line that leaves its tube."""


class ReturnConditionError(RuntimeError):
    """Too many sampled lines fail to close."""


# ---------------------------------------------------------------- frames

def closed_frame(center: Curve3, grid: int = FRAME_GRID, order: int | None = None):
    """Rotation-minimizing normal frame along ``center`` with its holonomy spread
    uniformly over one turn.  Returns ``(N1, N2, holonomy)``, the normals as
    Fourier curves so that their derivatives are exact."""
    t, P, D = center.nodes(grid)
    T = D / np.linalg.norm(D, axis=1)[:, None]
    seed = np.eye(3)[np.argmin(np.abs(T[0]))]
    r = np.empty((grid + 1, 3))
    r[0] = seed - (seed @ T[0]) * T[0]
    r[0] /= np.linalg.norm(r[0])
    Pc = np.vstack([P, P[:1]])
    Tc = np.vstack([T, T[:1]])
    # double reflection transport
    for m in range(grid):
        v1 = Pc[m + 1] - Pc[m]
        c1 = v1 @ v1
        rL = r[m] - (2.0 / c1) * (v1 @ r[m]) * v1
        tL = Tc[m] - (2.0 / c1) * (v1 @ Tc[m]) * v1
        v2 = Tc[m + 1] - tL
        c2 = v2 @ v2
        r[m + 1] = rL - (2.0 / c2) * (v2 @ rL) * v2 if c2 > 0 else rL
    b0 = np.cross(T[0], r[0])
    hol = math.atan2(r[grid] @ b0, r[grid] @ r[0])
    ang = -hol * t / TWO_PI
    rr = r[:grid]
    bb = np.cross(T, rr)
    n1 = np.cos(ang)[:, None] * rr + np.sin(ang)[:, None] * bb
    n2 = np.cross(T, n1)
    if order is None:
        order = min(grid // 2 - 1, max(64, 8 * center.order))
    return Curve3.from_samples(n1, order), Curve3.from_samples(n2, order), hol


# ---------------------------------------------------------------- tubes

@dataclass(eq=False)
class Tube:
    """Solid torus of radius ``radius`` about ``center`` carrying flux ``flux``.

    ``stream`` holds ``c_k`` of ``psi = sum_k c_k rho^(2k)`` (k = 1, 2, ...).
    ``transit`` is ``"uniform"`` (``f`` constant) or ``"isochronous"`` (``f``
    proportional to the length element integrated over s, so that every line
    of a pure-transit field has the same period).
    """

    center: Curve3
    radius: float
    flux: float = 1.0
    stream: tuple = ()
    transit: str = "isochronous"
    N1: Curve3 = field(init=False, repr=False)
    N2: Curve3 = field(init=False, repr=False)
    holonomy: float = field(init=False)

    def __post_init__(self):
        if self.radius <= 0 or self.flux <= 0:
            raise FieldError("tube radius and flux must be positive")
        if self.transit not in TRANSITS:
            raise FieldError(f"unknown transit profile {self.transit!r}; choose from {TRANSITS}")
        self.stream = tuple(float(c) for c in self.stream)
        self.N1, self.N2, self.holonomy = closed_frame(self.center)
        # Lambda(xi, eta) = int J ds is affine in (xi, eta)
        n = 2048
        s = TWO_PI * np.arange(n) / n
        lam = [float(np.mean(self.jacobian(s, np.full(n, xi), np.full(n, eta)))) * TWO_PI
               for xi, eta in ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))]
        self.lam = np.array([lam[0], lam[1] - lam[0], lam[2] - lam[0]])
        self.f0 = self.flux / (math.pi * self.radius ** 2)
        ang = TWO_PI * np.arange(64) / 64
        ss, aa = np.meshgrid(s[::16], ang)
        J = self.jacobian(ss.ravel(), self.radius * np.cos(aa.ravel()), self.radius * np.sin(aa.ravel()))
        if J.min() <= 0:
            raise FieldError("tube radius exceeds the focal distance of its centre curve")

    # geometry ---------------------------------------------------------
    def _frame(self, s):
        g, dg = self.center.eval(s)
        n1, dn1 = self.N1.eval(s)
        n2, dn2 = self.N2.eval(s)
        return g, dg, n1, dn1, n2, dn2

    def position(self, s, xi, eta):
        g, _, n1, _, n2, _ = self._frame(np.atleast_1d(s))
        return g + np.asarray(xi)[..., None] * n1 + np.asarray(eta)[..., None] * n2

    def tangent_map(self, s, xi, eta):
        """Columns ``(x_s, x_xi, x_eta)`` of the coordinate Jacobian, shape (m, 3, 3)."""
        g, dg, n1, dn1, n2, dn2 = self._frame(np.atleast_1d(s))
        xs = dg + np.asarray(xi)[..., None] * dn1 + np.asarray(eta)[..., None] * dn2
        return np.stack([xs, n1, n2], axis=-1)

    def jacobian(self, s, xi, eta):
        return np.linalg.det(self.tangent_map(s, xi, eta))

    @property
    def volume(self) -> float:
        return float(self.lam[0] * math.pi * self.radius ** 2)

    # field ------------------------------------------------------------
    def psi(self, xi, eta):
        r2 = np.asarray(xi) ** 2 + np.asarray(eta) ** 2
        return sum(c * r2 ** (k + 1) for k, c in enumerate(self.stream)) + 0.0 * r2

    def _dpsi(self, r2):
        return sum((k + 1) * c * r2 ** k for k, c in enumerate(self.stream)) + 0.0 * r2

    def transit_density(self, xi, eta):
        """``f = J B^s``, the flux density across a cross-section."""
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if self.transit == "uniform":
            return self.f0 + 0.0 * xi
        return self.f0 * (self.lam[0] + self.lam[1] * xi + self.lam[2] * eta) / self.lam[0]

    def coordinate_flux(self, xi, eta):
        """``J B`` in tube coordinates, shape (m, 3)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        d = 2.0 * self._dpsi(xi * xi + eta * eta)
        return np.stack([self.transit_density(xi, eta), d * eta, -d * xi], axis=-1)

    def coordinate_velocity(self, q):
        """Right-hand side of the line equation in tube coordinates."""
        q = np.atleast_2d(q)
        F = self.coordinate_flux(q[:, 1], q[:, 2])
        return F / self.jacobian(q[:, 0], q[:, 1], q[:, 2])[:, None]

    def field_at(self, q):
        """Cartesian field at tube coordinates ``q`` (m, 3)."""
        q = np.atleast_2d(q)
        M = self.tangent_map(q[:, 0], q[:, 1], q[:, 2])
        return np.einsum("mij,mj->mi", M, self.coordinate_velocity(q))

    def rotation_number(self, rho: float) -> float:
        """Turns of a line about the centre per transit, for the uniform profile."""
        if self.transit != "uniform":
            raise FieldError("rotation number is constant along lines only for the uniform profile")
        return -2.0 * float(self._dpsi(rho * rho)) / self.f0

    def locate(self, x) -> np.ndarray | None:
        """Tube coordinates of ``x``, or None if ``x`` is not in the tube."""
        x = np.asarray(x, dtype=float)
        t, P, _ = self.center.nodes(512)
        m = int(np.argmin(np.linalg.norm(P - x, axis=1)))
        q = np.array([t[m], 0.0, 0.0])
        for _ in range(50):
            r = self.position(q[0], q[1], q[2])[0] - x
            M = self.tangent_map(q[0], q[1], q[2])[0]
            step = np.linalg.solve(M, r)
            q -= step
            if np.abs(step).max() < 1e-15 * max(1.0, abs(q[0])):
                break
        if np.linalg.norm(self.position(q[0], q[1], q[2])[0] - x) > 1e-10 * max(1.0, np.abs(x).max()):
            return None
        if math.hypot(q[1], q[2]) > self.radius * (1.0 + 1e-12):
            return None
        q[0] = q[0] % TWO_PI
        return q

    def to_dict(self) -> dict:
        return {"center": self.center.to_dict(), "radius": self.radius, "flux": self.flux,
                "stream": list(self.stream), "transit": self.transit}

    @classmethod
    def from_dict(cls, data: dict) -> "Tube":
        try:
            return cls(Curve3.from_dict(data["center"]), float(data["radius"]), float(data.get("flux", 1.0)),
                       tuple(data.get("stream", ())), str(data.get("transit", "isochronous")))
        except KeyError as exc:
            raise FieldError(f"tube missing key {exc}") from None


@dataclass(eq=False)
class FieldSystem:
    """One to three disjoint tubes, each with its own field."""

    tubes: tuple

    def __post_init__(self):
        self.tubes = tuple(self.tubes)
        if not 1 <= len(self.tubes) <= 3:
            raise FieldError(f"a field system has 1 to 3 tubes, got {len(self.tubes)}")
        pts = [tb.center.nodes(2048)[1] for tb in self.tubes]
        for a in range(len(self.tubes)):
            for b in range(a + 1, len(self.tubes)):
                d = float(cKDTree(pts[b]).query(pts[a])[0].min())
                if d <= 1.05 * (self.tubes[a].radius + self.tubes[b].radius):
                    raise FieldError(f"tubes {a + 1} and {b + 1} overlap (centre distance {d:.3g})")

    @classmethod
    def from_curves(cls, curves: Sequence[Curve3], radius: float, flux: float = 1.0,
                    stream=(), transit: str = "isochronous") -> "FieldSystem":
        return cls(tuple(Tube(c, radius, flux, tuple(stream), transit) for c in curves))

    def locate(self, x):
        for k, tb in enumerate(self.tubes):
            q = tb.locate(x)
            if q is not None:
                return k, q
        raise FieldError(f"point {np.asarray(x).tolist()} is not inside any tube")

    def divergence(self, tube: int, q, h: float = 1e-3) -> np.ndarray:
        """Cartesian divergence at tube coordinates ``q`` (m, 3) by a fourth-order
        stencil in the coordinates and the exact coordinate Jacobian."""
        tb = self.tubes[tube]
        q = np.atleast_2d(np.asarray(q, dtype=float))
        dB = np.empty((q.shape[0], 3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            dB[:, :, k] = (-tb.field_at(q + 2 * e) + 8 * tb.field_at(q + e)
                           - 8 * tb.field_at(q - e) + tb.field_at(q - 2 * e)) / (12 * h)
        Minv = np.linalg.inv(tb.tangent_map(q[:, 0], q[:, 1], q[:, 2]))
        return np.einsum("mik,mki->m", dB, Minv)

    def check_divergence(self, n: int = 64, seed: int = 0) -> float:
        """Largest relative divergence ``|div B| a / max|B|`` at random interior points."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for k, tb in enumerate(self.tubes):
            rho = 0.9 * tb.radius * np.sqrt(rng.random(n))
            th = TWO_PI * rng.random(n)
            q = np.stack([TWO_PI * rng.random(n), rho * np.cos(th), rho * np.sin(th)], axis=1)
            scale = np.linalg.norm(tb.field_at(q), axis=1).max() / tb.radius
            worst = max(worst, float(np.abs(self.divergence(k, q)).max() / scale))
        return worst

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "tubes": [tb.to_dict() for tb in self.tubes]}

    @classmethod
    def from_dict(cls, data: dict) -> "FieldSystem":
        if not isinstance(data, dict) or data.get("schema") != SCHEMA:
            got = data.get("schema") if isinstance(data, dict) else None
            raise FieldError(f"unsupported schema {got!r}, expected {SCHEMA!r}")
        tubes = data.get("tubes")
        if not isinstance(tubes, list):
            raise FieldError("'tubes' must be a list")
        return cls(tuple(Tube.from_dict(t) for t in tubes))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def load(cls, path) -> "FieldSystem":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FieldError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)


# ---------------------------------------------------------------- tracing

@dataclass
class TraceResult:
    """Samples of one line on a uniform time grid."""

    tube: int
    times: np.ndarray
    points: np.ndarray
    coords: np.ndarray
    closed: bool
    period: float | None
    n_transits: int
    closure_error: float
    drift: float
    solution: object = field(default=None, repr=False)
    geometry: Tube | None = field(default=None, repr=False)

    def at(self, t):
        """Cartesian position at times ``t`` from the dense output."""
        q = np.atleast_2d(self.solution(np.atleast_1d(t)).T)
        return self.geometry.position(q[:, 0], q[:, 1], q[:, 2])

    def closed_curve(self, fit_tol: float = FIT_TOL, max_order: int = 512) -> Curve3:
        """Fourier curve through one period of a closed line, refined until it
        matches the trajectory to ``fit_tol`` at interleaved times."""
        if not self.closed:
            raise FieldError("line did not close")
        n = 64
        while True:
            t = self.period * np.arange(n) / n
            curve = Curve3.from_samples(self.at(t), n // 2 - 1)
            mid = self.period * (np.arange(n) + 0.5) / n
            err = np.linalg.norm(curve.eval(TWO_PI * mid / self.period)[0] - self.at(mid), axis=1).max()
            if err < fit_tol:
                return curve
            if n // 2 - 1 >= max_order:
                raise FieldError(f"closed line needs more than {max_order} modes (fit error {err:.2e})")
            n *= 2


def _period_guess(tb: Tube, q0) -> float:
    return float(tb.lam[0] / tb.transit_density(q0[1], q0[2]))


def trace(fsys: FieldSystem, x0, T: float, tol: float = 1e-11, n_out: int | None = None,
          samples_per_transit: int = 64, stop_at_closure: bool = False, tube: int | None = None,
          coords=None) -> TraceResult:
    """Integrate the line through ``x0`` for time ``T``.

    Closure is detected at successive crossings of the section ``s = 0``: the
    line is closed when a crossing lands within the closure tolerance of the
    first one.  With ``stop_at_closure`` the integration ends at the first
    return (``T`` is then an upper bound).
    """
    if coords is not None:
        k, q0 = int(tube), np.asarray(coords, dtype=float)
    else:
        k, q0 = fsys.locate(x0)
    tb = fsys.tubes[k]
    psi0 = float(tb.psi(q0[1], q0[2]))
    rho0 = math.hypot(q0[1], q0[2])

    def rhs(t, q):
        return tb.coordinate_velocity(q)[0]

    sol = solve_ivp(rhs, (0.0, T), q0, method="DOP853", rtol=tol, atol=tol * tb.radius,
                    dense_output=True)
    if sol.status != 0:
        raise FieldError(f"integration failed: {sol.message}")
    dense = sol.sol
    s_end = sol.y[0, -1]
    # a start within round-off of the section counts as the first crossing
    k0 = int(round(q0[0] / TWO_PI))
    on_section = abs(q0[0] - k0 * TWO_PI) < 1e-12
    first_k = k0 if on_section else math.floor(q0[0] / TWO_PI) + 1
    crossings = []
    for kk in range(first_k, math.floor(s_end / TWO_PI) + 1):
        target = kk * TWO_PI
        if on_section and kk == k0:
            crossings.append(0.0)
            continue
        crossings.append(brentq(lambda t: dense(t)[0] - target, 0.0, T, xtol=1e-14, rtol=1e-15))
    ctol = CLOSURE_FACTOR * 2.0 * tb.radius
    closed, period, ntr, cerr = False, None, 0, math.inf
    if crossings:
        p1 = tb.position(*dense(crossings[0]))[0]
        for j, tc in enumerate(crossings[1:], start=1):
            e = float(np.linalg.norm(tb.position(*dense(tc))[0] - p1))
            if e < ctol:
                closed, period, ntr, cerr = True, tc - crossings[0], j, e
                break
    T_out = period if (closed and stop_at_closure) else T
    if n_out is None:
        n_out = max(256, int(samples_per_transit * T_out / _period_guess(tb, q0)) + 1)
    times = np.linspace(0.0, T_out, n_out)
    qs = dense(times).T
    rho = np.hypot(qs[:, 1], qs[:, 2])
    drift = float(np.abs(tb.psi(qs[:, 1], qs[:, 2]) - psi0).max())
    if rho.max() > tb.radius * (1.0 + 1e-9):
        raise FieldError(f"line left tube {k + 1}: radius drift {rho.max() - rho0:.3e}")
    pts = tb.position(qs[:, 0], qs[:, 1], qs[:, 2])
    res = TraceResult(k, times, pts, qs, closed, period, ntr, cerr, drift, dense, tb)
    if closed:
        back = float(np.linalg.norm(res.at(period)[0] - tb.position(*q0)[0]))
        res.closure_error = max(cerr, back)
    return res


# ---------------------------------------------------------------- Cesaro averages

@dataclass
class CesaroEstimate:
    """Running time averages at checkpoints and their ``1/T`` extrapolation."""

    checkpoints: np.ndarray
    values: np.ndarray
    limit: float
    spread: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {"checkpoints": self.checkpoints.tolist(), "values": self.values.tolist(),
                "limit": self.limit, "spread": self.spread, "lower": self.lower, "upper": self.upper}


def cesaro(checkpoints, values) -> CesaroEstimate:
    T = np.asarray(checkpoints, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(np.diff(T) <= 0):
        raise ValueError("checkpoints must increase")
    tail = slice(max(0, len(T) - 4), len(T))
    if len(T) >= 2:
        A = np.stack([np.ones(len(T[tail])), 1.0 / T[tail]], axis=1)
        limit = float(np.linalg.lstsq(A, v[tail], rcond=None)[0][0])
    else:
        limit = float(v[-1])
    last = v[-3:]
    half = v[len(v) // 2:]
    return CesaroEstimate(T, v, limit, float(last.max() - last.min()), float(half.min()), float(half.max()))


def _chord_closed(p):
    return np.ascontiguousarray(np.vstack([p, p[:1]]))


def asymptotic_linking(fsys: FieldSystem, x0, y0, T_max: float, n_checkpoints: int = 8,
                       samples_per_transit: int = 32, tol: float = 1e-10) -> CesaroEstimate:
    """Linking of the two lines up to time ``T``, each closed by its chord,
    divided by ``T^2`` and scaled by both tube volumes.

    For lines of period ``t0 = volume / flux`` this tends to ``lk * flux_a * flux_b``,
    the mutual helicity of the two tubes.
    """
    ka, qa = fsys.locate(x0)
    kb, qb = fsys.locate(y0)
    if ka == kb:
        raise FieldError("asymptotic linking needs lines in two different tubes")
    per = min(_period_guess(fsys.tubes[ka], qa), _period_guess(fsys.tubes[kb], qb))
    n_out = n_checkpoints * max(1, int(math.ceil(samples_per_transit * T_max / per / n_checkpoints))) + 1
    ta = trace(fsys, None, T_max, tol, n_out=n_out, tube=ka, coords=qa)
    tb = trace(fsys, None, T_max, tol, n_out=n_out, tube=kb, coords=qb)
    step = (n_out - 1) // n_checkpoints
    vol = fsys.tubes[ka].volume * fsys.tubes[kb].volume
    cps, vals = [], []
    for c in range(1, n_checkpoints + 1):
        m = c * step + 1
        T = ta.times[m - 1]
        lk = _kernels.polygon_gauss(_chord_closed(ta.points[:m]), _chord_closed(tb.points[:m]))
        cps.append(T)
        vals.append(lk * vol / T ** 2)
    return cesaro(cps, vals)


# ---------------------------------------------------------------- ergodic M

@dataclass
class ErgodicResult:
    estimate: Estimate
    values: list
    stderrs: list
    weights: list
    n_skipped: int
    n_attempted: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate.to_dict(), "values": self.values, "stderrs": self.stderrs,
                "weights": self.weights, "n_skipped": self.n_skipped, "n_attempted": self.n_attempted}


def flux_uniform_start(tb: Tube, rng: np.random.Generator) -> np.ndarray:
    """Point of the section ``s = 0`` drawn with density proportional to ``f``."""
    fmax = float(np.max(tb.transit_density(tb.radius * np.array([1, -1, 0, 0]),
                                           tb.radius * np.array([0, 0, 1, -1]))))
    fmax = max(fmax, tb.f0)
    while True:
        r = tb.radius * math.sqrt(rng.random())
        th = TWO_PI * rng.random()
        xi, eta = r * math.cos(th), r * math.sin(th)
        if rng.random() * fmax <= float(tb.transit_density(xi, eta)):
            return np.array([0.0, xi, eta])


def triple_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def ergodic_M(fsys: FieldSystem, n_triples: int, seed: int, cfg: Config | None = None,
              max_transits: int = 64, weighting: str = "flux", tol: float = 1e-11,
              max_skip_fraction: float = 0.05) -> ErgodicResult:
    """Average of the curve invariant over ordered triples of closed lines, one
    line per tube, with starting points drawn flux-uniformly on each section."""
    from .terms import assemble_M

    if len(fsys.tubes) != 3:
        raise FieldError("ergodic_M needs exactly three tubes")
    if weighting not in ("flux", "period"):
        raise FieldError(f"unknown weighting {weighting!r}")
    cfg = cfg or Config()
    vals, errs, wts, skipped = [], [], [], 0
    for idx in range(n_triples):
        ts = triple_seed(seed, idx)
        rng = np.random.default_rng(ts)
        curves, periods = [], []
        for k, tb in enumerate(fsys.tubes):
            q0 = flux_uniform_start(tb, rng)
            res = trace(fsys, None, max_transits * 1.01 * _period_guess(tb, q0), tol,
                        stop_at_closure=True, tube=k, coords=q0)
            if not res.closed:
                break
            curves.append(res.closed_curve())
            periods.append(res.period)
        if len(curves) < 3:
            skipped += 1
            continue
        br = assemble_M(Link3(tuple(curves), name=f"triple {idx}"), cfg, ts)
        vals.append(br.M.value)
        errs.append(br.M.stderr)
        wts.append(float(np.prod(periods)) if weighting == "period" else 1.0)
    if skipped > max_skip_fraction * n_triples:
        raise ReturnConditionError(f"{skipped} of {n_triples} triples had a non-closing line")
    if not vals:
        raise ReturnConditionError("no triple closed")
    v, e, w = np.array(vals), np.array(errs), np.array(wts)
    w = w / w.sum()
    mean = float(w @ v)
    n = len(v)
    between = float(w @ (v - mean) ** 2) * n / max(n - 1, 1) / n if n > 1 else 0.0
    within = float(w ** 2 @ e ** 2)
    est = Estimate(mean, math.sqrt(between + within), n, 0, True, int(seed))
    return ErgodicResult(est, vals, errs, wts, skipped, n_triples)
