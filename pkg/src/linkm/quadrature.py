"""
Integration engine: periodic trapezoid rules, importance-sampled Monte Carlo
over R^3 and R^3 x R^3, deterministic block streams, error bookkeeping.

Every Monte Carlo estimate is built from fixed-size blocks.  Block ``b`` of a
stream labelled ``label`` draws from a Philox generator keyed by
``(seed, crc32(label), b)``, so results do not depend on how blocks are
scheduled across workers.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .curves import TWO_PI, Link3
from .potentials import CurveSet, FieldValues, link_curveset

FOUR_PI = 4.0 * np.pi
BIAS_FRACTION = 1e-3


@dataclass
class Estimate:
    """A numerical integration result."""

    value: float
    stderr: float = 0.0
    n_samples: int = 0
    n_excluded_singular: int = 0
    converged: bool = True
    seed: int | None = None
    skip_reason: str = ""
    bias_warning: bool = False
    wall_time: float = 0.0

    @classmethod
    def exact_zero(cls, reason: str) -> "Estimate":
        return cls(0.0, 0.0, 0, 0, True, None, reason)

    def __add__(self, other: "Estimate") -> "Estimate":
        return Estimate(self.value + other.value, math.hypot(self.stderr, other.stderr),
                        self.n_samples + other.n_samples,
                        self.n_excluded_singular + other.n_excluded_singular,
                        self.converged and other.converged, None, "",
                        self.bias_warning or other.bias_warning, self.wall_time + other.wall_time)

    def scaled(self, factor: float) -> "Estimate":
        out = Estimate(**asdict(self))
        out.value = factor * self.value
        out.stderr = abs(factor) * self.stderr
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def product(a: Estimate, b: Estimate, factor: float = 1.0) -> Estimate:
    """``factor * a * b`` with first-order error propagation (independent factors)."""
    val = factor * a.value * b.value
    err = abs(factor) * math.hypot(a.value * b.stderr, b.value * a.stderr)
    return Estimate(val, err, a.n_samples + b.n_samples, a.n_excluded_singular + b.n_excluded_singular,
                    a.converged and b.converged, None, "", a.bias_warning or b.bias_warning,
                    a.wall_time + b.wall_time)


def total(estimates) -> Estimate:
    out = Estimate(0.0)
    for e in estimates:
        out = out + e
    return out


def block_rng(seed: int, label: str, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(zlib.crc32(label.encode()), int(block)))
    return np.random.Generator(np.random.Philox(ss))


# ------------------------------------------------------------ deterministic

def periodic_integral(f: Callable[[np.ndarray], np.ndarray], tol: float = 1e-12, n0: int = 16,
                      n_max: int = 1 << 20) -> Estimate:
    """Trapezoid rule on [0, 2 pi) with node doubling until successive values
    differ by less than ``tol``.  Nested grids reuse previous nodes."""
    n = n0
    t = TWO_PI * np.arange(n) / n
    s = float(np.sum(f(t)))
    val = TWO_PI * s / n
    while n < n_max:
        t_new = TWO_PI * (np.arange(n) + 0.5) / n
        s += float(np.sum(f(t_new)))
        n *= 2
        new = TWO_PI * s / n
        delta = abs(new - val)
        val = new
        if delta < tol:
            return Estimate(val, delta, n, converged=True)
    return Estimate(val, delta, n, converged=False)


# ------------------------------------------------------------ samplers

@dataclass
class Batch:
    """Sample points with their proposal density and (optionally) link fields."""

    x: np.ndarray
    density: np.ndarray
    fields: FieldValues | None = None

    @property
    def excluded(self) -> np.ndarray:
        if self.fields is None:
            return np.zeros(len(self.x), dtype=bool)
        return self.fields.singular


def cauchy3_density(x: np.ndarray, center: np.ndarray, scale: float) -> np.ndarray:
    """Isotropic 3D Student-t density with one degree of freedom."""
    r2 = np.sum((x - center) ** 2, axis=-1) / scale**2
    return 1.0 / (np.pi**2 * scale**3 * (1.0 + r2) ** 2)


def cauchy3_draw(rng: np.random.Generator, n: int, center: np.ndarray, scale: float) -> np.ndarray:
    z = rng.standard_normal((n, 3))
    g = np.abs(rng.standard_normal(n))
    return center + scale * z / g[:, None]


def radial_kernel_density(u: np.ndarray, sigma: float) -> np.ndarray:
    """Isotropic density with half-normal radius: g(|u|) / (4 pi |u|^2)."""
    r2 = np.sum(u * u, axis=-1)
    g = np.sqrt(2.0 / np.pi) / sigma * np.exp(-0.5 * r2 / sigma**2)
    return g / (FOUR_PI * r2)


def radial_kernel_draw(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = sigma * np.abs(rng.standard_normal(n))
    return d * r[:, None]


@dataclass
class SamplerSpec:
    """Mixture proposal on R^3: tubes around each curve plus a broad heavy-tailed component."""

    curveset: CurveSet
    center: np.ndarray
    broad_scale: float
    tube_weight: float = 0.7
    broad_weight: float = 0.3
    pair_close_weight: float = 0.5
    pair_sigma: float = 0.1
    block_size: int = 4096
    budget: int = 1 << 16
    target_stderr: float = 0.0
    min_blocks: int = 4

    def __post_init__(self):
        if abs(self.tube_weight + self.broad_weight - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if min(self.tube_weight, self.broad_weight) < 0:
            raise ValueError("mixture weights must be non-negative")
        if self.broad_weight == 0:
            raise ValueError("the broad component keeps the proposal positive on R^3")

    @property
    def n_tubes(self) -> int:
        return len(self.curveset.curves)

    @property
    def sigma_tube(self) -> float:
        return self.curveset.sigma_tube

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.random(n)
        tube_idx = rng.integers(0, self.n_tubes, n)
        t = rng.uniform(0.0, TWO_PI, n)
        u = radial_kernel_draw(rng, n, self.sigma_tube)
        broad = cauchy3_draw(rng, n, self.center, self.broad_scale)
        x = broad.copy()
        use_tube = comp < self.tube_weight
        for j, c in enumerate(self.curveset.curves):
            sel = use_tube & (tube_idx == j)
            if np.any(sel):
                x[sel] = c.eval(t[sel])[0] + u[sel]
        return x

    def evaluate(self, x: np.ndarray, with_fields: bool = True) -> Batch:
        fields = self.curveset.evaluate(x, with_dens=True)
        dens = self.tube_weight * fields.tube_density.mean(axis=0) \
            + self.broad_weight * cauchy3_density(x, self.center, self.broad_scale)
        return Batch(x, dens, fields if with_fields else None)

    def density(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x, with_fields=False).density

    def with_(self, **kw) -> "SamplerSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SamplerSpec(**d)


def link_sampler(link: Link3, cfg, phi=None, budget: int | None = None,
                 target_stderr: float = 0.0) -> SamplerSpec:
    sc = cfg.sampler
    cs = link_curveset(link, cfg, phi=phi)
    return SamplerSpec(cs, link.centroid, link.scale, sc.tube_weight, sc.broad_weight,
                       sc.pair_close_weight, sc.pair_sigma_factor * cs.sigma_tube, sc.block_size,
                       cfg.volume_budget if budget is None else budget, target_stderr, cfg.min_blocks)


# ------------------------------------------------------------ Monte Carlo

class _Accumulator:
    """Per-block sums combined in block order (Chan's update), for ``k`` outputs at once."""

    def __init__(self, k: int):
        self.n = 0
        self.mean = np.zeros(k)
        self.m2 = np.zeros(k)
        self.excluded = 0

    def add(self, vals: np.ndarray, excluded: int):
        m = vals.shape[1]
        if m == 0:
            return
        bmean = vals.mean(axis=1)
        bm2 = ((vals - bmean[:, None]) ** 2).sum(axis=1)
        tot = self.n + m
        delta = bmean - self.mean
        self.mean = self.mean + delta * m / tot
        self.m2 = self.m2 + bm2 + delta * delta * self.n * m / tot
        self.n = tot
        self.excluded += excluded

    @property
    def stderr(self) -> np.ndarray:
        if self.n < 2:
            return np.full_like(self.mean, np.inf)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def _run_blocks(block_fn, sampler: SamplerSpec, seed: int, label: str, budget: int):
    """Accumulate blocks in order.  ``block_fn`` returns ``(vals, n_excluded)`` with
    ``vals`` of shape ``(m,)`` or ``(k, m)``; for vector output the last row is
    the monitored total and a list of Estimates is returned."""
    t0 = time.perf_counter()
    acc = None
    n_blocks = max(1, -(-budget // sampler.block_size))
    vector = False
    for b in range(n_blocks):
        vals, excl = block_fn(block_rng(seed, label, b))
        vals = np.asarray(vals, dtype=float)
        vector = vals.ndim == 2
        vals = np.atleast_2d(vals)
        if acc is None:
            acc = _Accumulator(vals.shape[0])
        acc.add(vals, excl)
        if sampler.target_stderr > 0 and b + 1 >= sampler.min_blocks \
                and acc.stderr[-1] <= sampler.target_stderr:
            break
    converged = sampler.target_stderr <= 0 or bool(acc.stderr[-1] <= sampler.target_stderr)
    bias = acc.excluded > BIAS_FRACTION * max(acc.n, 1)
    wall = time.perf_counter() - t0
    out = [Estimate(float(m), float(e), acc.n, acc.excluded, converged, seed, "", bias, wall)
           for m, e in zip(acc.mean, acc.stderr)]
    return out if vector else out[0]


def mc_volume(f: Callable, sampler: SamplerSpec, seed: int, label: str = "volume",
              budget: int | None = None, takes_batch: bool = False) -> Estimate:
    """Importance-sampled integral of ``f`` over R^3.

    ``f`` receives the points (``takes_batch=False``) or the whole
    :class:`Batch` including link potentials (``takes_batch=True``).
    Samples within the hard floor of a curve are excluded and counted.
    """
    budget = sampler.budget if budget is None else budget

    def block(rng):
        x = sampler.draw(rng, sampler.block_size)
        batch = sampler.evaluate(x)
        fx = f(batch) if takes_batch else f(x)
        fx = np.asarray(fx, dtype=float)
        excl = batch.excluded
        w = np.where(excl, 0.0, fx / batch.density)
        return w, int(excl.sum())

    return _run_blocks(block, sampler, seed, label, budget)


@dataclass
class PairBatch:
    x: Batch
    y: Batch
    density: np.ndarray


def _block_estimates(block_fn, sampler: SamplerSpec, seed: int, label: str, budget: int,
                     per_block: int):
    """Accumulate one value (or one vector) per block; the standard error comes
    from the spread between independent blocks."""
    t0 = time.perf_counter()
    acc = None
    n_blocks = max(2, -(-budget // per_block))
    vector = False
    for b in range(n_blocks):
        vals, excl = block_fn(block_rng(seed, label, b))
        vals = np.asarray(vals, dtype=float)
        vector = vals.ndim == 1
        vals = vals.reshape(-1, 1)
        if acc is None:
            acc = _Accumulator(vals.shape[0])
        acc.add(vals, excl)
        if sampler.target_stderr > 0 and b + 1 >= max(sampler.min_blocks, 4) \
                and acc.stderr[-1] <= sampler.target_stderr:
            break
    converged = sampler.target_stderr <= 0 or bool(acc.stderr[-1] <= sampler.target_stderr)
    n_pts = acc.n * per_block
    bias = acc.excluded > BIAS_FRACTION * max(n_pts, 1)
    wall = time.perf_counter() - t0
    out = [Estimate(float(m), float(e), n_pts, acc.excluded, converged, seed, "", bias, wall)
           for m, e in zip(acc.mean, acc.stderr)]
    return out if vector else out[0]


def mc_pair_volume(f: Callable, sampler: SamplerSpec, seed: int, label: str = "pair",
                   budget: int | None = None, takes_batch: bool = False,
                   pair_sum: Callable | None = None) -> Estimate:
    """Importance-sampled integral over R^3 x R^3 of an integrand carrying a
    ``|x - y|^-2`` singularity on the diagonal.

    The integrand is split with ``chi(r) = exp(-r^2 / delta^2)``,
    ``delta = sqrt(2) * pair_sigma``:

    * far part ``(1 - chi) f``: independent points from the point proposal.
      With ``pair_sum`` every ordered pair of distinct points in a block is
      used (a U-statistic); ``pair_sum(batch, delta)`` must return
      ``sum_{i != j} (1 - chi) f(x_i, x_j) / (p_i p_j)``.  Without it,
      disjoint consecutive pairs are used.
    * near part ``chi f``: close pairs ``(x, x + u)`` or ``(y + u, y)`` with
      ``u`` from the radial kernel of scale ``pair_sigma``, whose density
      cancels ``chi`` exactly; the pair density is symmetric in the two points.

    ``f`` takes ``(x, y)`` or, with ``takes_batch``, a :class:`PairBatch` and
    may return ``(m,)`` or ``(k, m)`` values (the last row is monitored).
    The standard error is the spread of independent block values.
    ``budget`` counts field evaluations.
    """
    budget = sampler.budget if budget is None else budget
    sig = sampler.pair_sigma
    delta = math.sqrt(2.0) * sig
    n_far = sampler.block_size
    n_near = max(2, int(round(sampler.pair_close_weight * sampler.block_size / 2)))

    def call(px, py, q):
        return np.asarray(f(PairBatch(px, py, q)) if takes_batch else f(px.x, py.x), dtype=float)

    def block(rng):
        z = sampler.draw(rng, n_far)
        base = sampler.draw(rng, n_near)
        moved = base + radial_kernel_draw(rng, n_near, sig)
        flip = (rng.random(n_near) < 0.5)[:, None]
        x = np.where(flip, moved, base)
        y = np.where(flip, base, moved)
        allb = sampler.evaluate(np.concatenate([z, x, y]))
        sl_z = slice(0, n_far)
        sl_x = slice(n_far, n_far + n_near)
        sl_y = slice(n_far + n_near, n_far + 2 * n_near)
        bz = Batch(z, allb.density[sl_z], _slice_fields(allb.fields, sl_z))
        bx = Batch(x, allb.density[sl_x], _slice_fields(allb.fields, sl_x))
        by = Batch(y, allb.density[sl_y], _slice_fields(allb.fields, sl_y))
        excl_z = bz.excluded
        # far part
        if pair_sum is not None:
            far = np.asarray(pair_sum(bz, delta), dtype=float) / (n_far * (n_far - 1))
        else:
            h = n_far // 2
            pa = Batch(z[:h], bz.density[:h], _slice_fields(bz.fields, slice(0, h)))
            pb = Batch(z[h:2 * h], bz.density[h:2 * h], _slice_fields(bz.fields, slice(h, 2 * h)))
            r2 = np.sum((pa.x - pb.x) ** 2, axis=1)
            q = pa.density * pb.density
            vals = call(pa, pb, q) * (-np.expm1(-r2 / delta**2)) / q
            vals = np.where(pa.excluded | pb.excluded, 0.0, vals)
            far = vals.mean(axis=-1)
        # near part
        uu = x - y
        r2 = np.sum(uu * uu, axis=1)
        qn = 0.5 * (bx.density + by.density) * radial_kernel_density(uu, sig)
        vals = call(bx, by, qn) * np.exp(-r2 / delta**2) / qn
        excl_n = bx.excluded | by.excluded
        vals = np.where(excl_n, 0.0, vals)
        near = vals.mean(axis=-1)
        return far + near, int(excl_z.sum() + excl_n.sum())

    per_block = n_far + 2 * n_near
    return _block_estimates(block, sampler, seed, label, budget, per_block)


def _slice_fields(fv: FieldValues, sl) -> FieldValues:
    return FieldValues(fv.A[:, sl], fv.Aphi[:, sl], fv.tube_density[:, sl], fv.flags[:, sl])
