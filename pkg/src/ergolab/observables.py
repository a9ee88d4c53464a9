"""Observables, time averages, and deviation from a space average.

An observable is a real function of a point together with the regularity
data the dimension machinery needs: a global Lipschitz constant (w.r.t. the
system's metric) and a sup-norm bound.  The catalog:

    cos1          cos(2*pi*x1)                       Lip 2*pi, sup 1
    coord         x1 on intervals; circle distance   Lip 1
                  to 0 on the torus (sup 1/2)
    bump(a, w)    plateau of width w around the      Lip 1/a,  sup 1
                  domain midpoint, linear ramps of
                  length a down to 0

Time averages are arithmetic means of the observable along the first n
orbit points (j = 0..n-1).  `deviation` measures |time average - phibar|,
the quantity whose level sets the deviation ladders and covers estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .systems import System, _as_batch, _check_domain, _restore, domain_diameter

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Observable:
    """A scalar observable with Lipschitz/sup regularity data.

    `fn` maps an (N, d) batch to an (N,) array.  `lip` may be None for
    discontinuous observables; such observables are rejected by operations
    that need a modulus of continuity.
    """

    oid: str
    fn: Callable = field(repr=False, compare=False)
    lip: float | None = None
    sup_abs: float = 1.0
    params: tuple = ()


def _circle_dist0(x):
    return np.minimum(x, 1.0 - x)


def get_observable(oid: str, sys: System, **params) -> Observable:
    """Build a catalog observable adapted to a system's domain."""
    if oid == "cos1":
        return Observable("cos1", lambda p: np.cos(_TWO_PI * p[:, 0]),
                          lip=_TWO_PI, sup_abs=1.0)
    if oid == "coord":
        if sys.domain == "torus":
            # distance to 0 on the circle: the 1-Lipschitz sawtooth
            return Observable("coord", lambda p: _circle_dist0(p[:, 0]),
                              lip=1.0, sup_abs=0.5)
        sup = max(abs(sys.lo), abs(sys.hi))
        return Observable("coord", lambda p: p[:, 0], lip=1.0, sup_abs=sup)
    if oid == "bump":
        a = float(params.get("a", 0.0))
        w = float(params.get("w", 0.0))
        if a <= 0.0:
            raise ValueError("bump needs ramp width a > 0")
        if w < 0.0:
            raise ValueError("bump needs plateau width w >= 0")
        if sys.domain == "torus":
            center = 0.5

            def fn(p, _a=a, _w=w, _c=center):
                d = np.abs(p[:, 0] - _c)
                d = np.minimum(d, 1.0 - d)
                return np.clip(1.0 - (d - _w / 2.0) / _a, 0.0, 1.0)
        else:
            center = (sys.lo + sys.hi) / 2.0

            def fn(p, _a=a, _w=w, _c=center):
                d = np.abs(p[:, 0] - _c)
                return np.clip(1.0 - (d - _w / 2.0) / _a, 0.0, 1.0)
        return Observable("bump", fn, lip=1.0 / a, sup_abs=1.0,
                          params=(("a", a), ("w", w)))
    raise ValueError(f"unknown observable id {oid!r}")


def time_average(sys: System, obs: Observable, x, n: int):
    """Mean of the observable over orbit points f^j(x), j = 0..n-1."""
    if n < 1:
        raise ValueError("time average needs n >= 1")
    pts, tag = _as_batch(sys, x)
    _check_domain(sys, pts)
    acc = obs.fn(pts).astype(np.float64, copy=True)
    for _ in range(n - 1):
        pts = sys._step(pts)
        acc += obs.fn(pts)
    acc /= n
    if tag in ("scalar", "point"):
        return float(acc[0])
    return acc


def deviation(sys: System, obs: Observable, phibar: float, x, n: int):
    """|time average - phibar|: distance of x from typical behavior at horizon n."""
    avg = time_average(sys, obs, x, n)
    return abs(avg - phibar) if np.isscalar(avg) else np.abs(avg - phibar)


@dataclass(frozen=True)
class DeviationParams:
    """The (observable, phibar, alpha) triple defining a deviation set."""

    observable: Observable
    phibar: float
    alpha: float


def modulus_delta(obs: Observable, alpha: float, diameter: float) -> float:
    """Ball radius below which the observable moves by strictly less than alpha/2.

    delta = min(alpha / (2 * lip) * (1 - 1e-6), diameter).  The (1 - 1e-6)
    factor keeps the sup over the *closed* ball strictly under alpha/2.
    Constant observables (lip == 0) get the diameter; observables without a
    Lipschitz bound are rejected — the caller must supply a radius.
    """
    if obs.lip is None:
        raise ValueError(f"observable {obs.oid!r} has no Lipschitz bound; supply delta explicitly")
    if alpha <= 0.0:
        raise ValueError("modulus_delta needs alpha > 0")
    lip = obs.lip if obs.lip > 0.0 else 1e-300
    return min(alpha / (2.0 * lip) * (1.0 - 1e-6), diameter)


def modulus_delta_for(sys: System, obs: Observable, alpha: float) -> float:
    return modulus_delta(obs, alpha, domain_diameter(sys))
