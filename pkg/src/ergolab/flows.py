"""Suspension flows over the catalog maps.

A suspension flow moves a state (x, s) upward in the fiber coordinate s at
unit speed under a positive roof function rho; reaching the roof applies
the base map and resets s to 0.  Flow averages are time integrals along
trajectories, evaluated segment by segment with composite-midpoint
quadrature inside each fiber crossing (exact for observables constant
along the fiber, since the integrand is then piecewise constant).

The module also provides the two bridge checks between flow averages and
base-map averages:

  * integer-part reduction: |avg_T - avg_floor(T)| is controlled by
    2 sup|Phi| (T - floor(T)) / T;
  * nontypical inclusion: a state whose flow average deviates by alpha at
    horizon T (with T >= 4 sup|Phi| / alpha) has time-1-map deviation at
    least alpha/2 at horizon floor(T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .observables import Observable
from .rng import STREAM_FLOW, raw_blocks, uniform01
from .systems import System, _as_batch, _check_domain, distance, wrap_unit

_TWO_PI = 2.0 * math.pi


def _scalar(v) -> float:
    return float(np.asarray(v).reshape(-1)[0])


@dataclass(frozen=True)
class Roof:
    kind: str
    fn: Callable                  # (N, d) -> (N,) positive
    rho_min: float
    rho_max: float
    params: tuple = ()


def constant_roof(value: float = 1.0) -> Roof:
    if value <= 0.0:
        raise ValueError("roof must be positive")
    return Roof("constant", lambda p, _v=value: np.full(p.shape[0], _v),
                value, value, (("value", float(value)),))


def cosine_roof(a: float) -> Roof:
    """1 + a cos(2 pi x1); needs |a| < 1 to stay positive."""
    if not abs(a) < 1.0:
        raise ValueError("cosine roof needs |a| < 1 to stay positive")
    return Roof("cosine", lambda p, _a=a: 1.0 + _a * np.cos(_TWO_PI * p[:, 0]),
                1.0 - abs(a), 1.0 + abs(a), (("a", float(a)),))


@dataclass(frozen=True)
class SuspensionFlow:
    base: System
    roof: Roof


@dataclass(frozen=True)
class FlowState:
    """A point of the suspension space: base point x, fiber height s."""

    x: np.ndarray
    s: float


@dataclass(frozen=True)
class FlowObservable:
    oid: str
    fn: Callable                  # (x: (N,d), s: (N,)) -> (N,)
    sup_abs: float


def fiber_constant(obs: Observable) -> FlowObservable:
    """Lift a base observable to the flow, constant along each fiber."""
    return FlowObservable(obs.oid, lambda x, s, _f=obs.fn: _f(x), obs.sup_abs)


def _checked_state(flow: SuspensionFlow, state: FlowState):
    pts, _ = _as_batch(flow.base, state.x)
    _check_domain(flow.base, pts)
    room = float(flow.roof.fn(pts)[0])
    if not (0.0 <= state.s < room):
        raise DomainError(f"fiber height {state.s} outside [0, {room})")
    return pts, float(state.s)


def flow_step(flow: SuspensionFlow, state: FlowState, t: float) -> FlowState:
    """Advance a state by time t >= 0.  Hitting the roof exactly crosses."""
    if t < 0.0:
        raise ValueError("flow time must be >= 0")
    pts, s = _checked_state(flow, state)
    remaining = float(t)
    guard = int(remaining / flow.roof.rho_min) + 2
    for _ in range(guard):
        room = float(flow.roof.fn(pts)[0]) - s
        if remaining < room:
            s += remaining
            break
        remaining -= room
        pts = flow.base._step(pts)
        s = 0.0
    return FlowState(pts[0].copy(), s)


def flow_time_average(flow: SuspensionFlow, fobs: FlowObservable,
                      state: FlowState, T: float,
                      quadrature_step: float | None = None) -> float:
    """(1/T) * integral of the observable along the trajectory from state.

    Composite midpoint quadrature inside each fiber segment; segment
    boundaries are hit exactly, so fiber-constant observables integrate
    exactly regardless of the step.
    """
    if T <= 0.0:
        raise ValueError("need T > 0")
    step = flow.roof.rho_min / 8.0 if quadrature_step is None else float(quadrature_step)
    if step <= 0.0:
        raise ValueError("need quadrature_step > 0")
    pts, s = _checked_state(flow, state)
    remaining = float(T)
    total = 0.0
    guard = int(remaining / flow.roof.rho_min) + 2
    for _ in range(guard):
        room = float(flow.roof.fn(pts)[0]) - s
        crossing = room <= remaining
        seg = room if crossing else remaining
        k = max(1, math.ceil(seg / step))
        h = seg / k
        offs = s + (np.arange(k, dtype=np.float64) + 0.5) * h
        vals = fobs.fn(np.broadcast_to(pts, (k, pts.shape[1])), offs)
        total += h * float(np.sum(vals))
        remaining -= seg
        if not crossing:
            break
        pts = flow.base._step(pts)
        s = 0.0
    return total / T


# ---------------------------------------------------------------------------
# bridge checks

@dataclass(frozen=True)
class IntegerPartCheck:
    T: float
    lhs: float
    bound: float
    ok: bool
    headline_constant: float      # sup|Phi| / floor(T): reported, not asserted
    headline_ok: bool


def integer_part_reduction_check(flow: SuspensionFlow, fobs: FlowObservable,
                                 state: FlowState, T: float,
                                 quadrature_step: float | None = None) -> IntegerPartCheck:
    """Compare the flow average at T against the one at floor(T).

    The asserted control is |avg_T - avg_floor(T)| <= 2 sup|Phi| (T-floor(T))/T
    (plus a 1e-12 rounding allowance).  The tighter summary constant
    sup|Phi|/floor(T) is reported alongside for reference.
    """
    if T < 2.0:
        raise ValueError("need T >= 2 so that floor(T) >= 2 stays meaningful")
    nT = math.floor(T)
    a_T = flow_time_average(flow, fobs, state, T, quadrature_step)
    a_n = flow_time_average(flow, fobs, state, float(nT), quadrature_step)
    lhs = abs(a_T - a_n)
    bound = 2.0 * fobs.sup_abs * (T - nT) / T + 1e-12
    headline = fobs.sup_abs / nT
    return IntegerPartCheck(float(T), lhs, bound, lhs <= bound,
                            headline, lhs <= headline + 1e-12)


@dataclass(frozen=True)
class InclusionCheck:
    T: float
    alpha: float
    dev_flow: float
    dev_map: float | None
    vacuous: bool
    ok: bool


def flow_nontypical_inclusion_check(flow: SuspensionFlow, fobs: FlowObservable,
                                    phibar: float, alpha: float,
                                    state: FlowState, T: float,
                                    quadrature_step: float | None = None) -> InclusionCheck:
    """Flow deviation >= alpha at T must force time-1-map deviation >= alpha/2.

    The time-1 map's Birkhoff average of the fiber-integrated observable
    over floor(T) steps equals the flow average at horizon floor(T), which
    is how the map-side deviation is evaluated.  States whose flow average
    does not deviate make the implication vacuous (ok by default).
    """
    if alpha <= 0.0:
        raise ValueError("need alpha > 0")
    if T < 4.0 * fobs.sup_abs / alpha:
        raise ValueError(f"need T >= 4 sup|Phi| / alpha = {4.0 * fobs.sup_abs / alpha}")
    dev_flow = abs(flow_time_average(flow, fobs, state, T, quadrature_step) - phibar)
    if dev_flow < alpha:
        return InclusionCheck(float(T), alpha, dev_flow, None, True, True)
    nT = float(math.floor(T))
    dev_map = abs(flow_time_average(flow, fobs, state, nT, quadrature_step) - phibar)
    return InclusionCheck(float(T), alpha, dev_flow, dev_map, False,
                          dev_map >= alpha / 2.0 - 1e-9)


# ---------------------------------------------------------------------------
# sampling helpers

def sample_flow_states(flow: SuspensionFlow, seed: int, start: int, count: int):
    """Draw flow states (uniform base point, uniform admissible fiber height).

    Returns (states, extra) where extra is one more uniform per state (the
    last word of its counter block) for callers that need a per-state
    parameter, e.g. a randomized horizon.
    """
    sys = flow.base
    blocks = raw_blocks(seed, STREAM_FLOW, start, count)
    u = uniform01(blocks[:, :sys.d])
    pts = sys.lo + (sys.hi - sys.lo) * u
    u_s = uniform01(blocks[:, sys.d])
    heights = flow.roof.fn(pts) * u_s * (1.0 - 1e-12)
    extra = uniform01(blocks[:, 3])
    states = [FlowState(pts[i].copy(), float(heights[i])) for i in range(count)]
    return states, extra


def estimate_time1_lipschitz(flow: SuspensionFlow, pair_count: int, seed: int,
                             offset_scale: float = 1e-6) -> float:
    """Empirical Lipschitz constant of the time-1 map on the suspension space.

    Distance is sqrt(base distance^2 + fiber gap^2).  Pairs are a sampled
    state and a small random perturbation of it.
    """
    if pair_count < 1:
        raise ValueError("need pair_count >= 1")
    sys = flow.base
    states, extra = sample_flow_states(flow, seed, 0, pair_count)
    worst = 0.0
    for i, st in enumerate(states):
        # perturb the base point; fold the extra uniform into the direction
        shift = offset_scale * (2.0 * extra[i] - 1.0)
        x2 = st.x + shift
        if sys.domain == "torus":
            x2 = np.asarray(wrap_unit(x2))
        else:
            x2 = np.clip(x2, sys.lo, sys.hi)
        room2 = float(flow.roof.fn(x2.reshape(1, sys.d))[0])
        st2 = FlowState(x2, min(st.s, room2 * (1.0 - 1e-12)))
        d0 = math.hypot(_scalar(distance(sys, st.x, st2.x)), st.s - st2.s)
        if d0 == 0.0:
            continue
        f1 = flow_step(flow, st, 1.0)
        f2 = flow_step(flow, st2, 1.0)
        d1 = math.hypot(_scalar(distance(sys, f1.x, f2.x)), f1.s - f2.s)
        worst = max(worst, d1 / d0)
    return worst
