"""Deviation-set measures: sampled ladders, exact oracles, and rate fits.

The central object is the measure of the deviation set

    K(alpha, n) = { x : |(1/n) sum_{j<n} phi(f^j x) - phibar| >= alpha }

as a function of the horizon n.  Ladders of these measures are estimated by
Monte Carlo over orbit ensembles, or computed exactly for the digit
observable (binary digit frequencies are Bernoulli(1/2), so the measure is
a binomial tail).  An exponential-decay fit  measure ~ C * exp(-n h)
extracts the empirical rate h, to be compared against the closed-form
Bernoulli rate.

Thresholds are closed (>=).  The exact oracle compares |k/n - 1/2| against
Fraction(alpha) — the exact binary value of the float argument — which is
the same test the float estimator applies to exact dyadic frequencies, so
the two routes agree even when k/n lands exactly on the threshold.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .observables import DeviationParams, Observable
from .systems import System, sample_orbit_ensemble

LN2 = math.log(2.0)

METHOD_MC = "monte-carlo"
METHOD_BINOMIAL = "exact-binomial"
METHOD_CYLINDER = "exact-cylinder"

# The digit observable (leading binary digit / half-interval indicator) is
# discontinuous, so it lives here — next to the exact oracle that justifies
# it — rather than in the continuous catalog.  lip=None marks it as
# ineligible for modulus-based machinery.
DIGIT = Observable("digit", lambda p: (p[:, 0] >= 0.5).astype(np.float64),
                   lip=None, sup_abs=1.0)
DIGIT_MEAN = 0.5

_CHUNK = 1 << 15
_MIN_SAMPLES = 1_000


@dataclass(frozen=True)
class LadderEntry:
    n: int
    measure: float
    std_error: float
    sample_count: int
    method: str


@dataclass(frozen=True)
class DeviationLadder:
    system_id: str
    observable_id: str
    phibar: float
    alpha: float
    entries: tuple

    def n_values(self):
        return [e.n for e in self.entries]

    def measures(self):
        return [e.measure for e in self.entries]


# ---------------------------------------------------------------------------
# Monte-Carlo estimation

def _hit_grid(sys, obs, phibar, alphas, n_values, sample_count, seed, threads):
    """Hit counts for every (alpha, n) cell, one orbit pass per sample.

    Samples are chunked at a fixed size and each chunk draws its own counter
    blocks, so the counts are independent of the thread count; reductions
    are integer sums, so they are independent of completion order too.
    """
    n_values = list(n_values)
    if any(n < 1 for n in n_values):
        raise ValueError("deviation horizons must be >= 1")
    if sorted(n_values) != n_values or len(set(n_values)) != len(n_values):
        raise ValueError("n_values must be strictly increasing")
    alphas = [float(a) for a in alphas]

    def work(start):
        m = min(_CHUNK, sample_count - start)
        ens = sample_orbit_ensemble(sys, seed, start, m)
        sums = np.zeros(m)
        hits = np.zeros((len(alphas), len(n_values)), dtype=np.int64)
        k = 0
        for j, n in enumerate(n_values):
            while k < n:
                sums += obs.fn(ens.points())
                ens.advance()
                k += 1
            dev = np.abs(sums / n - phibar)
            for i, a in enumerate(alphas):
                hits[i, j] = np.count_nonzero(dev >= a)
        return hits

    starts = list(range(0, sample_count, _CHUNK))
    total = np.zeros((len(alphas), len(n_values)), dtype=np.int64)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for hits in pool.map(work, starts):
                total += hits
    else:
        for start in starts:
            total += work(start)
    return total


def estimate_deviation_measure(sys: System, params: DeviationParams, n: int,
                               sample_count: int, seed: int,
                               threads: int = 1) -> LadderEntry:
    """Monte-Carlo estimate of the deviation-set measure at one horizon.

    Degenerate thresholds short-circuit: alpha <= 0 covers the whole space
    (measure 1), alpha beyond 2*sup|phi| (centered deviations cannot reach
    it) gives measure 0; neither consumes randomness.
    """
    if sample_count < _MIN_SAMPLES:
        raise ValueError(f"sample_count must be >= {_MIN_SAMPLES}")
    obs, phibar, alpha = params.observable, params.phibar, params.alpha
    if alpha <= 0.0:
        return LadderEntry(n, 1.0, 0.0, sample_count, METHOD_MC)
    if alpha > 2.0 * obs.sup_abs:
        return LadderEntry(n, 0.0, 0.0, sample_count, METHOD_MC)
    hits = _hit_grid(sys, obs, phibar, [alpha], [n], sample_count, seed, threads)
    p = hits[0, 0] / sample_count
    se = math.sqrt(p * (1.0 - p) / sample_count)
    return LadderEntry(n, float(p), se, sample_count, METHOD_MC)


def build_deviation_ladder(sys: System, params: DeviationParams, n_values,
                           sample_count: int, seed: int,
                           threads: int = 1) -> DeviationLadder:
    """Estimate the deviation measure at every horizon of a ladder.

    All horizons are filled in a single orbit pass (a snapshot of the
    running average at each requested n), which is bit-identical to
    independent per-horizon estimation because each sample's orbit is a
    pure function of its counter block.
    """
    ladders = build_deviation_ladders(sys, params.observable, params.phibar,
                                      [params.alpha], n_values, sample_count,
                                      seed, threads)
    return ladders[params.alpha]


def build_deviation_ladders(sys: System, obs: Observable, phibar: float,
                            alphas, n_values, sample_count: int, seed: int,
                            threads: int = 1) -> dict:
    """Ladders for several thresholds from one shared orbit pass."""
    if sample_count < _MIN_SAMPLES:
        raise ValueError(f"sample_count must be >= {_MIN_SAMPLES}")
    alphas = [float(a) for a in alphas]
    n_values = list(n_values)
    live = [a for a in alphas if 0.0 < a <= 2.0 * obs.sup_abs]
    hits = None
    if live and n_values:
        hits = _hit_grid(sys, obs, phibar, live, n_values, sample_count, seed, threads)
    out = {}
    for a in alphas:
        entries = []
        for j, n in enumerate(n_values):
            if a <= 0.0:
                p, se = 1.0, 0.0
            elif a > 2.0 * obs.sup_abs:
                p, se = 0.0, 0.0
            else:
                p = hits[live.index(a), j] / sample_count
                se = math.sqrt(p * (1.0 - p) / sample_count)
            entries.append(LadderEntry(n, float(p), se, sample_count, METHOD_MC))
        out[a] = DeviationLadder(sys.sid, obs.oid, phibar, a, tuple(entries))
    return out


# ---------------------------------------------------------------------------
# exact binomial oracle (digit observable on the doubling map)

def exact_deviation_measure_digit(alpha: float, n: int) -> float:
    """Exact measure of {|digit frequency - 1/2| >= alpha} at horizon n.

    Digit frequencies of the doubling map are Bernoulli(1/2), so the
    measure is an integer binomial sum over the admissible counts k.  The
    threshold uses Fraction(alpha) — the exact value of the float — so a
    class with k/n exactly on the boundary is classified the same way the
    float comparison classifies it.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    a = Fraction(float(alpha))
    half = Fraction(1, 2)
    num = 0
    for k in range(n + 1):
        if abs(Fraction(k, n) - half) >= a:
            num += math.comb(n, k)
    return float(Fraction(num, 2**n))


def exact_digit_ladder(alpha: float, n_values) -> DeviationLadder:
    """Exact ladder for the digit observable; no sampling, zero error bars."""
    entries = tuple(
        LadderEntry(int(n), exact_deviation_measure_digit(alpha, int(n)), 0.0, 0, METHOD_BINOMIAL)
        for n in n_values
    )
    return DeviationLadder("doubling", DIGIT.oid, DIGIT_MEAN, float(alpha), entries)


def cramer_bernoulli(alpha: float, with_flag: bool = False):
    """Closed-form large-deviation rate for Bernoulli(1/2) digit frequencies.

    rate(alpha) = ln 2 - H(1/2 + alpha), with H the natural-log entropy.
    Beyond alpha = 1/2 the deviation is impossible and the rate saturates at
    ln 2; with_flag=True returns (rate, capped) to expose that saturation.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be >= 0")
    capped = alpha >= 0.5
    if capped:
        rate = LN2
    else:
        p = 0.5 + alpha
        q = 0.5 - alpha
        rate = LN2 + p * math.log(p) + (q * math.log(q) if q > 0.0 else 0.0)
    if with_flag:
        return rate, capped
    return rate


# ---------------------------------------------------------------------------
# exponential-decay fits

@dataclass(frozen=True)
class RateFunctionFit:
    C: float
    h: float
    fit_window: tuple
    r_squared: float
    residual_max: float
    dropped_zero_entries: int


def default_fit_window(ladder: DeviationLadder):
    """Deepest usable stretch of the ladder for an exponential fit.

    An entry is usable when its measure exceeds 10*eps and, for sampled
    entries, 5/sample_count (fewer than ~5 hits say nothing about a rate).
    The window is the longest run of consecutive usable entries ending at
    the last usable one — the asymptotic end of the ladder.
    """
    eps_floor = 10.0 * np.finfo(float).eps

    def usable(e):
        floor = eps_floor
        if e.method == METHOD_MC and e.sample_count > 0:
            floor = max(floor, 5.0 / e.sample_count)
        return e.measure > floor

    flags = [usable(e) for e in ladder.entries]
    if not any(flags):
        raise ValueError("no ladder entries above the fit floor")
    last = max(i for i, f in enumerate(flags) if f)
    first = last
    while first > 0 and flags[first - 1]:
        first -= 1
    return ladder.entries[first].n, ladder.entries[last].n


def fit_rate_function(ladder: DeviationLadder, window=None) -> RateFunctionFit:
    """Least-squares fit of log(measure) = log C - h n over a window of horizons.

    window is an inclusive (n_lo, n_hi) pair; None picks the default window
    (see default_fit_window).  Zero-measure entries inside the window are
    dropped and counted.  Fewer than 4 usable points is an error.
    """
    if window is None:
        window = default_fit_window(ladder)
    lo, hi = window
    inside = [e for e in ladder.entries if lo <= e.n <= hi]
    usable = [e for e in inside if e.measure > 0.0]
    dropped = len(inside) - len(usable)
    if len(usable) < 4:
        raise ValueError(f"need at least 4 positive entries in window {window}, got {len(usable)}")
    x = np.array([e.n for e in usable], dtype=float)
    y = np.log(np.array([e.measure for e in usable]))
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    resid = y - pred
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFunctionFit(C=float(np.exp(intercept)), h=float(-slope),
                           fit_window=(int(lo), int(hi)), r_squared=r2,
                           residual_max=float(np.max(np.abs(resid))),
                           dropped_zero_entries=dropped)


# ---------------------------------------------------------------------------
# serialization

LADDER_CSV_COLUMNS = ("n", "measure", "std_error", "samples", "method")


def ladder_to_csv(ladder: DeviationLadder, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LADDER_CSV_COLUMNS)
        for e in ladder.entries:
            w.writerow([e.n, repr(e.measure), repr(e.std_error), e.sample_count, e.method])


def ladder_rows(ladder: DeviationLadder):
    return [
        {"n": e.n, "measure": e.measure, "std_error": e.std_error,
         "samples": e.sample_count, "method": e.method}
        for e in ladder.entries
    ]
