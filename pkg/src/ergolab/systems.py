"""Model dynamical systems and their orbit machinery.

The catalog covers four expanding/hyperbolic families on the circle, the
interval, and the 2-torus:

    doubling      x -> 2x (mod 1)          circle,   Lip 2
    tent          x -> 1 - |1 - 2x|        [0, 1],   Lip 2
    cat           (x,y) -> (2x+y, x+y)     2-torus,  Lip (3+sqrt(5))/2
    logistic(c)   x -> x^2 + c             [-b, b],  Lip 2b, b=(1+sqrt(1-4c))/2

Points are plain float64 arrays: a scalar for 1-d systems, a length-d
vector, or an (N, d) batch.  Torus coordinates always live in [0, 1).

Two orbit representations coexist on purpose.  Public orbit operations
(`iterate`, and everything built on them) use float64, which keeps the
worked identities exact (semigroup property, telescoping of averages) and
lets grids and covers be reproduced bit for bit.  Sampled orbit *ensembles*
for the piecewise-affine/integer-matrix systems instead run on 128-bit
fixed-point arithmetic: every float64 is a dyadic rational, so float64
orbits of these maps are exact binary shifts and collapse onto the fixed
point 0 within ~53 steps — a uniform sample would be silently destroyed
long before the horizons the deviation ladders need.  The fixed-point
ensembles are exact for ~128 steps and project to float64 only when an
observable is evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, SingularDerivativeError
from .rng import STREAM_ORBIT_SEED, STREAM_ORBITS, STREAM_SPACE_AVG, raw_blocks, uniform01

_U1 = np.uint64(1)
_U11 = np.uint64(11)
_U63 = np.uint64(63)
_TOP_BIT = np.uint64(1) << _U63
_INV_2_53 = float(2.0**-53)

# width of the float-rounding guard band at the mod-1 seam
_SEAM = 1.0 + 2.0**-40

_LN2 = math.log(2.0)
_CAT_EXPANSION = (3.0 + math.sqrt(5.0)) / 2.0  # largest singular value of [[2,1],[1,1]]


def wrap_unit(x):
    """Reduce coordinates mod 1 into [0, 1).

    Values that round onto the seam [1, 1 + 2^-40) are snapped to 0.0, so a
    coordinate like -1e-18 wraps to 0.0 rather than to a spurious 1.0.
    Accepts scalars or arrays; returns the same kind.
    """
    a = np.asarray(x, dtype=np.float64)
    y = a - np.floor(a)
    y = np.where((y >= 1.0) & (y < _SEAM), 0.0, y)
    if a.ndim == 0:
        return float(y)
    return y


@dataclass(frozen=True)
class System:
    """A catalog system: identity, domain, regularity data, and its step map.

    `lip` is the (best known global) Lipschitz constant of one step; the
    expansion base used by dimension bounds is `L = max(lip, 2)`.
    """

    sid: str
    d: int
    domain: str                     # "torus" | "interval"
    lo: float
    hi: float
    lip: float
    srb_kind: str                   # "lebesgue" | "empirical-orbit"
    params: tuple = ()
    _step: Callable = field(repr=False, compare=False, default=None)
    _log_inv_dnorm: Callable = field(repr=False, compare=False, default=None)

    @property
    def L(self) -> float:
        return max(self.lip, 2.0)

    def describe(self) -> str:
        extra = "".join(f", {k}={v}" for k, v in self.params)
        return f"{self.sid}({self.domain} d={self.d}{extra})"


def _step_doubling(pts):
    return wrap_unit(2.0 * pts)


def _step_tent(pts):
    return 1.0 - np.abs(1.0 - 2.0 * pts)


def _step_cat(pts):
    x, y = pts[:, 0], pts[:, 1]
    out = np.empty_like(pts)
    out[:, 0] = 2.0 * x + y
    out[:, 1] = x + y
    return wrap_unit(out)


def _logdi_doubling(pts):
    return np.full(pts.shape[0], -_LN2)


def _logdi_tent(pts):
    if np.any(pts[:, 0] == 0.5):
        raise SingularDerivativeError("tent derivative is undefined at the crease x = 1/2")
    return np.full(pts.shape[0], -_LN2)


def _logdi_cat(pts):
    # det Df = 1, so ||Df^-1|| equals the largest singular value of Df
    return np.full(pts.shape[0], math.log(_CAT_EXPANSION))


def get_system(sid: str, **params) -> System:
    """Build a catalog system by id.  `logistic` requires the parameter c."""
    if sid == "doubling":
        return System("doubling", 1, "torus", 0.0, 1.0, 2.0, "lebesgue",
                      _step=_step_doubling, _log_inv_dnorm=_logdi_doubling)
    if sid == "tent":
        return System("tent", 1, "interval", 0.0, 1.0, 2.0, "lebesgue",
                      _step=_step_tent, _log_inv_dnorm=_logdi_tent)
    if sid == "cat":
        return System("cat", 2, "torus", 0.0, 1.0, _CAT_EXPANSION, "lebesgue",
                      _step=_step_cat, _log_inv_dnorm=_logdi_cat)
    if sid == "logistic":
        if "c" not in params:
            raise ValueError("logistic requires parameter c")
        c = float(params["c"])
        if not (-2.0 <= c < 0.25):
            raise ValueError(f"logistic parameter c={c} outside [-2, 0.25)")
        beta = (1.0 + math.sqrt(1.0 - 4.0 * c)) / 2.0

        def step(pts, _c=c, _b=beta):
            out = pts * pts + _c
            # one step can exit [-b, b] only by float rounding; clamp the dust
            return np.clip(out, -_b, _b)

        def logdi(pts):
            ax = np.abs(pts[:, 0])
            if np.any(ax == 0.0):
                raise SingularDerivativeError("logistic derivative vanishes at the critical point x = 0")
            return -np.log(2.0 * ax)

        return System("logistic", 1, "interval", -beta, beta, 2.0 * beta,
                      "empirical-orbit", params=(("c", c),),
                      _step=step, _log_inv_dnorm=logdi)
    raise ValueError(f"unknown system id {sid!r}")


# ---------------------------------------------------------------------------
# point handling

def _as_batch(sys: System, x):
    """Coerce a point argument to an (N, d) float64 batch plus a shape tag."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        if sys.d != 1:
            raise ValueError(f"scalar point given to {sys.d}-d system {sys.sid}")
        return a.reshape(1, 1).copy(), "scalar"
    if a.ndim == 1:
        if sys.d == 1:
            return a.reshape(-1, 1).copy(), "flat"
        if a.shape[0] == sys.d:
            return a.reshape(1, sys.d).copy(), "point"
        raise ValueError(f"length-{a.shape[0]} vector is not a point of {sys.describe()}")
    if a.ndim == 2 and a.shape[1] == sys.d:
        return a.copy(), "batch"
    raise ValueError(f"cannot interpret shape {a.shape} as points of {sys.describe()}")


def _restore(pts: np.ndarray, tag: str):
    if tag == "scalar":
        return float(pts[0, 0])
    if tag == "point":
        return pts[0]
    if tag == "flat":
        return pts[:, 0]
    return pts


def _check_domain(sys: System, pts: np.ndarray):
    if sys.domain == "torus":
        bad = (pts < 0.0) | (pts >= 1.0)
    else:
        bad = (pts < sys.lo) | (pts > sys.hi)
    if np.any(bad):
        i = int(np.argwhere(np.any(np.atleast_2d(bad), axis=-1))[0][0])
        raise DomainError(f"point {pts[i]} outside domain of {sys.describe()}")


def iterate(sys: System, x, k: int):
    """Apply the step map k >= 0 times.  Domain is checked before stepping."""
    if k < 0:
        raise ValueError("iterate needs k >= 0")
    pts, tag = _as_batch(sys, x)
    _check_domain(sys, pts)
    for _ in range(k):
        pts = sys._step(pts)
    return _restore(pts, tag)


def distance(sys: System, a, b):
    """Metric of the system's domain: flat-torus distance or euclidean."""
    pa, tag_a = _as_batch(sys, a)
    pb, _ = _as_batch(sys, b)
    pa, pb = np.broadcast_arrays(pa, pb)
    diff = np.abs(pa - pb)
    if sys.domain == "torus":
        diff = np.minimum(diff, 1.0 - diff)
    d = np.sqrt(np.sum(diff * diff, axis=1))
    if tag_a in ("scalar", "point") and d.shape[0] == 1:
        return float(d[0])
    return d


def domain_diameter(sys: System) -> float:
    if sys.domain == "torus":
        return math.sqrt(sys.d) / 2.0
    return sys.hi - sys.lo


def nonuniform_expansion_exponent(sys: System, x, n: int):
    """Average of log ||Df(f^j x)^-1|| over the first n orbit points (j < n).

    Negative values certify expansion along the orbit segment; the tent
    crease and the logistic critical point raise SingularDerivativeError.
    """
    if n < 1:
        raise ValueError("expansion exponent needs n >= 1")
    pts, tag = _as_batch(sys, x)
    _check_domain(sys, pts)
    acc = np.zeros(pts.shape[0])
    for _ in range(n):
        acc += sys._log_inv_dnorm(pts)
        pts = sys._step(pts)
    acc /= n
    if tag in ("scalar",):
        return float(acc[0])
    if tag == "point":
        return float(acc[0])
    return acc


# ---------------------------------------------------------------------------
# sampled orbit ensembles

class _FloatOrbits:
    """Generic float64 ensemble (used by the logistic family)."""

    def __init__(self, sys, pts):
        self.sys = sys
        self.x = pts

    def points(self) -> np.ndarray:
        return self.x

    def advance(self):
        self.x = self.sys._step(self.x)


class _DyadicOrbits1D:
    """Exact 128-bit fixed-point orbits for doubling and tent.

    State per sample is (hi, lo) uint64 with value (hi*2^64 + lo) / 2^128.
    Doubling is a 128-bit left shift; tent is a conditional two's-complement
    negation (1 - x is exact mod 2^128) followed by the shift.  Exact binary
    arithmetic keeps the ensemble uniform for ~128 steps, immune to the
    float64 orbit collapse of these dyadic maps.
    """

    def __init__(self, kind, hi, lo):
        self.kind = kind
        self.hi = hi
        self.lo = lo

    def points(self) -> np.ndarray:
        return ((self.hi >> _U11) * _INV_2_53)[:, None]

    def advance(self):
        hi, lo = self.hi, self.lo
        if self.kind == "tent":
            neg = hi >= _TOP_BIT
            nlo = (~lo) + _U1
            nhi = (~hi) + (lo == 0).astype(np.uint64)
            hi = np.where(neg, nhi, hi)
            lo = np.where(neg, nlo, lo)
        self.hi = (hi << _U1) | (lo >> _U63)
        self.lo = lo << _U1


def _add128(ahi, alo, bhi, blo):
    lo = alo + blo
    carry = (lo < alo).astype(np.uint64)
    return ahi + bhi + carry, lo


class _DyadicOrbitsCat:
    """Exact 128-bit fixed-point orbits of the 2-torus map (2x+y, x+y)."""

    def __init__(self, xhi, xlo, yhi, ylo):
        self.xhi, self.xlo = xhi, xlo
        self.yhi, self.ylo = yhi, ylo

    def points(self) -> np.ndarray:
        out = np.empty((self.xhi.shape[0], 2))
        out[:, 0] = (self.xhi >> _U11) * _INV_2_53
        out[:, 1] = (self.yhi >> _U11) * _INV_2_53
        return out

    def advance(self):
        dxh = (self.xhi << _U1) | (self.xlo >> _U63)
        dxl = self.xlo << _U1
        nxh, nxl = _add128(dxh, dxl, self.yhi, self.ylo)
        nyh, nyl = _add128(self.xhi, self.xlo, self.yhi, self.ylo)
        self.xhi, self.xlo, self.yhi, self.ylo = nxh, nxl, nyh, nyl


def sample_orbit_ensemble(sys: System, seed: int, start: int, count: int,
                          stream: int = STREAM_ORBITS):
    """Draw samples [start, start+count) of a system's orbit ensemble.

    Sample i always consumes counter block i of the given stream, so any
    chunking of [0, N) yields bit-identical orbits.  Initial conditions are
    uniform over the domain (the natural measure for every catalog system
    except logistic, whose ensembles are only used where a uniform seed is
    the documented behavior).
    """
    blocks = raw_blocks(seed, stream, start, count)
    if sys.sid in ("doubling", "tent"):
        return _DyadicOrbits1D(sys.sid, blocks[:, 0].copy(), blocks[:, 1].copy())
    if sys.sid == "cat":
        return _DyadicOrbitsCat(blocks[:, 0].copy(), blocks[:, 1].copy(),
                                blocks[:, 2].copy(), blocks[:, 3].copy())
    u = uniform01(blocks[:, :sys.d])
    pts = sys.lo + (sys.hi - sys.lo) * u
    return _FloatOrbits(sys, pts)


def sample_points(sys: System, seed: int, start: int, count: int,
                  stream: int = STREAM_SPACE_AVG) -> np.ndarray:
    """Uniform float64 points on the domain, one counter block per point."""
    blocks = raw_blocks(seed, stream, start, count)
    u = uniform01(blocks[:, :sys.d])
    return sys.lo + (sys.hi - sys.lo) * u


# ---------------------------------------------------------------------------
# space averages

@dataclass(frozen=True)
class SpaceAverage:
    """A space average of an observable with its sampling metadata."""

    value: float
    std_error: float
    method: str              # "lebesgue-mc" | "empirical-orbit"
    sample_count: int
    seed: int
    orbit_length: int = 0
    transient: int = 0
    seed_point: float | None = None


_CHUNK = 1 << 16


def srb_space_average(sys: System, observable, seed: int,
                      samples: int = 1_000_000,
                      orbit_length: int = 10_000_000,
                      transient: int = 10_000) -> SpaceAverage:
    """Average an observable against the system's natural measure.

    Lebesgue systems use plain Monte Carlo over uniform points (counter
    blocks of the space-average stream, accumulated in fixed chunk order).
    The logistic family averages along one long orbit after a transient,
    started from a seeded uniform point; its standard error comes from 100
    batch means.
    """
    phi = observable.fn
    if sys.srb_kind == "lebesgue":
        if samples < 2:
            raise ValueError("need at least 2 samples")
        total = 0.0
        total_sq = 0.0
        done = 0
        while done < samples:
            m = min(_CHUNK, samples - done)
            vals = phi(sample_points(sys, seed, done, m))
            total += float(np.sum(vals))
            total_sq += float(np.sum(vals * vals))
            done += m
        mean = total / samples
        var = max(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
        return SpaceAverage(mean, math.sqrt(var / samples), "lebesgue-mc", samples, seed)

    # empirical-orbit: one long float64 orbit, batch-mean error bars
    if orbit_length < 100:
        raise ValueError("orbit_length must be at least 100")
    u = float(uniform01(raw_blocks(seed, STREAM_ORBIT_SEED, 0, 1)[0, 0:1])[0])
    x0 = sys.lo + (sys.hi - sys.lo) * u
    x = float(iterate(sys, x0, transient))
    n_batches = 100
    batch = orbit_length // n_batches
    used = batch * n_batches
    buf = np.empty(batch)
    sums = np.empty(n_batches)
    c = dict(sys.params).get("c")
    for b in range(n_batches):
        if c is not None:
            lo, hi = sys.lo, sys.hi
            for i in range(batch):
                buf[i] = x
                x = x * x + c
                if x < lo:
                    x = lo
                elif x > hi:
                    x = hi
        else:  # pragma: no cover - no other empirical-orbit system in catalog
            for i in range(batch):
                buf[i] = x
                x = float(iterate(sys, x, 1))
        sums[b] = float(np.sum(phi(buf[:, None])))
    means = sums / batch
    value = float(np.sum(sums)) / used
    se = float(np.std(means, ddof=1)) / math.sqrt(n_batches)
    return SpaceAverage(value, se, "empirical-orbit", used, seed,
                        orbit_length=used, transient=transient, seed_point=x0)
