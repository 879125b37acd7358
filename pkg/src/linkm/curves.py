"""
Closed space curves as truncated Fourier series, and ordered 3-component links.

A curve is

    x(t) = c + sum_{k=1}^{N} a_k cos(k t) + b_k sin(k t),   t in [0, 2 pi)

with ``a_k, b_k`` stored per axis as ``cos[axis, k-1]`` and ``sin[axis, k-1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

TWO_PI = 2.0 * np.pi
SCHEMA = "linkm-curve-v1"
VALIDATION_GRID = 4096


class CurveError(ValueError):
    """Invalid curve, link or motion."""


@dataclass(frozen=True, eq=False)
class Curve3:
    """One closed parametrized curve with period 2 pi."""

    constant: np.ndarray
    cos: np.ndarray
    sin: np.ndarray

    def __post_init__(self):
        c0 = np.asarray(self.constant, dtype=float).reshape(3)
        ck = np.atleast_2d(np.asarray(self.cos, dtype=float))
        sk = np.atleast_2d(np.asarray(self.sin, dtype=float))
        if ck.shape[0] != 3 or sk.shape != ck.shape:
            raise CurveError(f"coefficient arrays must be (3, N), got {ck.shape} and {sk.shape}")
        for name, arr in (("constant", c0), ("cos", ck), ("sin", sk)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def order(self) -> int:
        return self.cos.shape[1]

    def eval(self, t):
        """Return ``(points, tangents)`` at parameter values ``t``.

        Scalar ``t`` gives two 3-vectors; array ``t`` of shape ``(m,)`` gives
        two ``(m, 3)`` arrays.  The tangent is the exact derivative dx/dt.
        """
        t_arr = np.asarray(t, dtype=float)
        scalar = t_arr.ndim == 0
        tt = np.mod(np.atleast_1d(t_arr), TWO_PI)
        k = np.arange(1, self.order + 1)
        kt = np.outer(tt, k)
        c, s = np.cos(kt), np.sin(kt)
        pts = self.constant + c @ self.cos.T + s @ self.sin.T
        tan = (s * -k) @ self.cos.T + (c * k) @ self.sin.T
        if scalar:
            return pts[0], tan[0]
        return pts, tan

    def second_derivative(self, t):
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.arange(1, self.order + 1)
        kt = np.outer(tt, k)
        return (np.cos(kt) * -(k**2)) @ self.cos.T + (np.sin(kt) * -(k**2)) @ self.sin.T

    def nodes(self, n: int):
        """Uniform parameter grid ``t_m = 2 pi m / n`` with points and tangents."""
        t = TWO_PI * np.arange(n) / n
        pts, tan = self.eval(t)
        return t, pts, tan

    def max_speed(self) -> float:
        k = np.arange(1, self.order + 1)
        return float(np.sum(k * np.hypot(np.linalg.norm(self.cos, axis=0), np.linalg.norm(self.sin, axis=0))))

    def validate(self, grid: int = VALIDATION_GRID) -> None:
        _, _, tan = self.nodes(grid)
        speed = np.linalg.norm(tan, axis=1)
        if speed.min() <= 1e-9 * max(1.0, speed.max()):
            raise CurveError("tangent vanishes on the validation grid")

    def diameter(self, grid: int = 512) -> float:
        _, pts, _ = self.nodes(grid)
        centred = pts - pts.mean(axis=0)
        return 2.0 * float(np.linalg.norm(centred, axis=1).max())

    def padded(self, order: int) -> "Curve3":
        if order < self.order:
            raise CurveError("cannot pad to a lower order")
        pad = ((0, 0), (0, order - self.order))
        return Curve3(self.constant, np.pad(self.cos, pad), np.pad(self.sin, pad))

    def reversed(self) -> "Curve3":
        """Same image, opposite orientation (t -> -t)."""
        return Curve3(self.constant, self.cos, -self.sin)

    @classmethod
    def from_samples(cls, samples: np.ndarray, order: int | None = None) -> "Curve3":
        """Trigonometric fit to ``samples`` taken at uniform parameter values."""
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        if order is None:
            order = (n - 1) // 2
        if 2 * order >= n:
            raise CurveError(f"order {order} needs more than {2 * order} samples, got {n}")
        coef = np.fft.rfft(samples, axis=0) / n
        k = np.arange(1, order + 1)
        return cls(coef[0].real, 2.0 * coef[k].real.T, -2.0 * coef[k].imag.T)

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], order: int = 64,
                      oversample: int = 4) -> "Curve3":
        n = max(2 * order + 2, oversample * order)
        t = TWO_PI * np.arange(n) / n
        return cls.from_samples(func(t), order)

    def to_dict(self) -> dict:
        return {"constant": self.constant.tolist(), "cos": self.cos.tolist(), "sin": self.sin.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Curve3":
        try:
            return cls(np.array(data["constant"], dtype=float), np.array(data["cos"], dtype=float),
                       np.array(data["sin"], dtype=float))
        except KeyError as exc:
            raise CurveError(f"component missing key {exc}") from None

    def __repr__(self):
        return f"Curve3(order={self.order}, constant={self.constant.tolist()})"


def circle(center=(0.0, 0.0, 0.0), radius: float = 1.0, u=(1.0, 0.0, 0.0), v=(0.0, 1.0, 0.0)) -> Curve3:
    """Circle ``center + r (u cos t + v sin t)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return Curve3(np.asarray(center, dtype=float), radius * u.reshape(3, 1), radius * v.reshape(3, 1))


def ellipse(center, a: float, b: float, u, v) -> Curve3:
    return Curve3(np.asarray(center, dtype=float), a * np.asarray(u, float).reshape(3, 1),
                  b * np.asarray(v, float).reshape(3, 1))


@dataclass(frozen=True, eq=False)
class Link3:
    """Ordered triple of pairwise disjoint closed curves."""

    components: tuple
    name: str = ""

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != 3:
            raise CurveError(f"a Link3 needs exactly 3 components, got {len(comps)}")
        for c in comps:
            if not isinstance(c, Curve3):
                raise CurveError("components must be Curve3")
            c.validate()
        object.__setattr__(self, "components", comps)
        if self.separation_lower_bound <= 0.0:
            raise CurveError(f"components are not disjoint (certified separation {self.separation_lower_bound:.3e})")

    def __getitem__(self, i: int) -> Curve3:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    @cached_property
    def _pair_separations(self):
        grid = VALIDATION_GRID
        data = [c.nodes(grid)[1] for c in self.components]
        out = {}
        for i, j in ((0, 1), (1, 2), (0, 2)):
            d, _ = cKDTree(data[j]).query(data[i])
            out[(i, j)] = float(d.min())
        return out

    @cached_property
    def min_separation(self) -> float:
        """Minimum pairwise distance between components on the validation grid."""
        return min(self._pair_separations.values())

    @cached_property
    def separation_lower_bound(self) -> float:
        # a grid point lies within h * vmax / 2 of any curve point between nodes
        h = TWO_PI / VALIDATION_GRID
        vmax = [c.max_speed() for c in self.components]
        return min(d - 0.5 * h * (vmax[i] + vmax[j]) for (i, j), d in self._pair_separations.items())

    @cached_property
    def scale(self) -> float:
        """Radius of the bounding sphere about the centroid."""
        pts = np.concatenate([c.nodes(256)[1] for c in self.components])
        return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).max())

    @cached_property
    def centroid(self) -> np.ndarray:
        pts = np.concatenate([c.nodes(256)[1] for c in self.components])
        return pts.mean(axis=0)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "name": self.name, "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, data: dict) -> "Link3":
        if not isinstance(data, dict):
            raise CurveError("link document must be a JSON object")
        if data.get("schema") != SCHEMA:
            raise CurveError(f"unsupported schema {data.get('schema')!r}, expected {SCHEMA!r}")
        comps = data.get("components")
        if not isinstance(comps, list) or len(comps) != 3:
            raise CurveError("'components' must be a list of exactly 3 curves")
        curves = []
        for idx, comp in enumerate(comps):
            try:
                curves.append(Curve3.from_dict(comp))
            except (CurveError, TypeError, ValueError) as exc:
                raise CurveError(f"component {idx}: {exc}") from None
        return cls(tuple(curves), name=str(data.get("name", "")))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def load(cls, path) -> "Link3":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CurveError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


@dataclass(frozen=True)
class RigidMotion:
    """``x -> scale * R x + translation`` with ``R`` orthogonal."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-12:
            raise CurveError("rotation is not orthogonal to 1e-12")
        if self.scale <= 0:
            raise CurveError("scale must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @property
    def det(self) -> float:
        return float(np.sign(np.linalg.det(self.rotation)))

    @classmethod
    def about_axis(cls, axis, angle: float, **kw) -> "RigidMotion":
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
        return cls(R, **kw)

    @classmethod
    def mirror(cls, normal=(0.0, 0.0, 1.0)) -> "RigidMotion":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(np.eye(3) - 2.0 * np.outer(n, n))

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0, shift: float = 1.0) -> "RigidMotion":
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return cls(q, shift * rng.standard_normal(3), scale)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(x) @ self.rotation.T + self.translation


def transform_curve(curve: Curve3, m: RigidMotion) -> Curve3:
    sR = m.scale * m.rotation
    return Curve3(sR @ curve.constant + m.translation, sR @ curve.cos, sR @ curve.sin)


def transform(link: Link3, m: RigidMotion) -> Link3:
    """Apply a similarity motion to every component (exact on coefficients)."""
    return Link3(tuple(transform_curve(c, m) for c in link), name=link.name)


class ReparametrizedCurve:
    """``u -> curve(tau(u))`` with ``tau(u) = shift + 2 pi S(u) / S(2 pi)``, S the
    running integral of a positive periodic speed profile."""

    def __init__(self, curve: Curve3, shift: float = 0.0,
                 speed_profile: Callable[[np.ndarray], np.ndarray] | None = None, grid: int = 4096):
        self.curve = curve
        self.shift = float(shift)
        self.speed_profile = speed_profile
        if speed_profile is None:
            self._coef = None
            return
        u = TWO_PI * np.arange(grid) / grid
        s = np.asarray(speed_profile(u), dtype=float)
        if s.min() <= 0:
            raise CurveError("speed profile must be positive")
        # spectral antiderivative of the periodic profile
        coef = np.fft.rfft(s) / grid
        self._mean = coef[0].real
        self._coef = coef
        self._grid = grid

    def _tau(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self._coef is None:
            return self.shift + u, np.ones_like(u)
        k = np.arange(1, len(self._coef))
        ck = self._coef[1:]
        if self._grid % 2 == 0:
            ck = ck.copy()
            ck[-1] *= 0.5
        e = np.exp(1j * np.outer(u, k))
        integral = self._mean * u + 2.0 * ((e - 1.0) @ (ck / (1j * k))).real
        speed = self._mean + 2.0 * (e @ ck).real
        return self.shift + integral / self._mean, speed / self._mean

    def eval(self, u):
        scalar = np.ndim(u) == 0
        tau, dtau = self._tau(u)
        pts, tan = self.curve.eval(tau)
        tan = tan * dtau[:, None]
        if scalar:
            return pts[0], tan[0]
        return pts, tan

    def to_curve(self, order: int = 96) -> Curve3:
        return Curve3.from_function(lambda u: self.eval(u)[0], order=order)


def reparametrize(curve: Curve3, shift: float = 0.0, speed_profile=None) -> ReparametrizedCurve:
    return ReparametrizedCurve(curve, shift, speed_profile)


def reparametrize_link(link: Link3, shifts: Sequence[float], profiles: Sequence, order: int = 96) -> Link3:
    comps = []
    for c, s, p in zip(link, shifts, profiles):
        if p is None and s == 0.0:
            comps.append(c)
        else:
            comps.append(reparametrize(c, s, p).to_curve(order))
    return Link3(tuple(comps), name=link.name)


def mirror(link: Link3, normal=(0.0, 0.0, 1.0)) -> Link3:
    return transform(link, RigidMotion.mirror(normal))


def isotopy_family(link: Link3, seed: int, amplitude: float, n_members: int = 5, n_modes: int = 3) -> list:
    """Seeded smooth perturbations of ``link``, each with sup-norm at most ``amplitude``."""
    if amplitude < 0:
        raise CurveError("amplitude must be non-negative")
    if amplitude > link.separation_lower_bound / 4.0:
        raise CurveError(f"amplitude {amplitude} exceeds a quarter of the certified separation "
                         f"{link.separation_lower_bound:.4g}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x150]))
    family = []
    for _ in range(n_members):
        comps = []
        for c in link:
            a = rng.standard_normal((3, n_modes))
            b = rng.standard_normal((3, n_modes))
            bound = np.linalg.norm(a, axis=0).sum() + np.linalg.norm(b, axis=0).sum()
            a *= amplitude / bound
            b *= amplitude / bound
            order = max(c.order, n_modes)
            base = c.padded(order)
            da = np.zeros((3, order))
            db = np.zeros((3, order))
            da[:, :n_modes] = a
            db[:, :n_modes] = b
            comps.append(Curve3(base.constant, base.cos + da, base.sin + db))
        member = Link3(tuple(comps), name=link.name)
        if member.min_separation < 0.5 * link.min_separation:
            raise CurveError("perturbed member lost more than half of the separation")
        family.append(member)
    return family


# ---------------------------------------------------------------- presets

def _hopf_plus_far_circle() -> Link3:
    return Link3((
        circle((0, 0, 0), 1.0, (1, 0, 0), (0, 1, 0)),
        circle((1, 0, 0), 1.0, (1, 0, 0), (0, 0, 1)),
        circle((0.5, 6.0, 0.5), 1.0, (1, 0, 0), (0, 1, 0)),
    ), name="hopf_plus_far_circle")


def _borromean() -> Link3:
    a, b = 2.0, 1.0
    ex, ey, ez = np.eye(3)
    return Link3((
        ellipse((0, 0, 0), a, b, ex, ey),
        ellipse((0, 0, 0), a, b, ey, ez),
        ellipse((0, 0, 0), a, b, ez, ex),
    ), name="borromean")


def _unlink_separated() -> Link3:
    return Link3((
        circle((0, 0, 0), 1.0),
        circle((10, 0, 0), 1.0),
        circle((5, 5 * np.sqrt(3), 0), 1.0),
    ), name="unlink_separated")


def _torus_2_2k(k: int) -> Link3:
    """Two (1, k) curves on a round torus forming the T(2, 2k) torus link, plus a
    meridian loop around the tube that links each of them once."""
    if k < 1:
        raise CurveError("torus_2_2k needs k >= 1")
    R, r = 2.0, 0.8

    def comp(phase):
        def f(t):
            ang = k * t + phase
            return np.stack([(R + r * np.cos(ang)) * np.cos(t), (R + r * np.cos(ang)) * np.sin(t),
                             -r * np.sin(ang)], axis=1)
        return Curve3.from_function(f, order=k + 1, oversample=8)

    meridian = circle((R, 0.0, 0.0), r + 0.6, (1, 0, 0), (0, 0, 1))
    return Link3((comp(0.0), comp(np.pi), meridian), name=f"torus_2_2k({k})")


def _chain_3() -> Link3:
    """Open chain of three round circles; the last one is tilted out of the
    plane of the first so that no reflection symmetry is left."""
    tilt = np.pi / 3
    return Link3((
        circle((0, 0, 0), 1.0, (1, 0, 0), (0, 1, 0)),
        circle((1.2, 0, 0), 1.0, (1, 0, 0), (0, 0, 1)),
        circle((2.4, 0, 0), 1.0, (1, 0, 0), (0, np.cos(tilt), np.sin(tilt))),
    ), name="chain_3")


PRESETS = ("hopf_plus_far_circle", "borromean", "unlink_separated", "torus_2_2k", "chain_3")


def preset(name: str, k: int = 2) -> Link3:
    """Analytic representative of a named link.  ``torus_2_2k(3)`` style names are accepted."""
    if name.startswith("torus_2_2k"):
        arg = name[len("torus_2_2k"):].strip("()")
        return _torus_2_2k(int(arg) if arg else k)
    builders = {
        "hopf_plus_far_circle": _hopf_plus_far_circle,
        "borromean": _borromean,
        "unlink_separated": _unlink_separated,
        "chain_3": _chain_3,
    }
    if name not in builders:
        raise CurveError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return builders[name]()
