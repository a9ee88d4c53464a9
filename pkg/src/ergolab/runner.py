"""Experiment configuration, the staged pipeline, and report assembly.

A single INI config drives the whole chain:

    deviation ladders -> rate fits -> dimension bound d0 -> cover ladder
    -> box dimension & d'-volume series -> verdict
    (+ optional ball-lemma and suspension-flow suites)

Reports are deterministic functions of (config, seed): every stochastic
stage draws from counter-based streams and every reduction is either
integer-valued or runs in a fixed order, so rerunning with a different
thread count reproduces the report byte for byte.  Wall-clock timings are
the one exception and live in their own report section, which consumers
are expected to drop before comparing.
"""

from __future__ import annotations

import configparser
import io
import json
import math
import time
from dataclasses import dataclass, field, fields

from .deviation import build_deviation_ladders, fit_rate_function, ladder_rows
from .dimension import (build_cover_ladder, dimension_upper_bound,
                        dprime_volume_series, try_box_dimension, verify_ball_lemma)
from .errors import RateNotEstablishedError, StageError, ValidationError
from .flows import (SuspensionFlow, constant_roof, cosine_roof,
                    estimate_time1_lipschitz, fiber_constant,
                    flow_nontypical_inclusion_check,
                    integer_part_reduction_check, sample_flow_states)
from .observables import get_observable, modulus_delta_for
from .systems import get_system, srb_space_average

VERDICT_HOLDS = "bound-holds"
VERDICT_VIOLATED = "bound-violated"
VERDICT_INCONCLUSIVE = "inconclusive"

STAGES = ("resolve", "space_average", "ladders", "fits", "cover", "dimension",
          "lemma", "flow")


@dataclass
class ExperimentConfig:
    """Flat experiment description; see configs/ for the INI shape."""

    system_id: str = "doubling"
    system_c: float | None = None            # logistic parameter
    observable_id: str = "cos1"
    bump_a: float | None = None
    bump_w: float | None = None

    alphas: tuple = (0.6,)
    n_min: int = 20
    n_max: int = 60
    n_stride: int = 4
    sample_count: int = 200_000
    seed: int = 42

    space_samples: int = 1_000_000
    orbit_length: int = 10_000_000
    transient: int = 10_000

    cover_n_min: int = 0                     # cover runs when cover_n_max >= cover_n_min >= 1
    cover_n_max: int = 0
    grid_budget: int = 10**8
    dprime_offsets: tuple = (0.05, 0.1, 0.2)
    verdict_slack: float = 0.05
    delta_override: float = 0.0              # 0 -> from the observable's modulus

    lemma_n: int = 10
    lemma_pairs: int = 0                     # 0 -> skip the lemma suite

    flow_enabled: bool = False
    roof_kind: str = "constant"
    roof_param: float = 1.0
    flow_T: float = 50.0
    flow_samples: int = 1000
    quadrature_step: float = 0.0             # 0 -> rho_min / 8

    out_dir: str = ""


def validate_config(cfg: ExperimentConfig):
    """Raise ValidationError naming the first offending field."""
    def fail(name, msg):
        raise ValidationError(f"{name}: {msg}")

    if cfg.system_id not in ("doubling", "tent", "cat", "logistic"):
        fail("system_id", f"unknown system {cfg.system_id!r}")
    if cfg.system_id == "logistic":
        if cfg.system_c is None:
            fail("system_c", "logistic requires the parameter c")
        if not (-2.0 <= cfg.system_c < 0.25):
            fail("system_c", f"c={cfg.system_c} outside [-2, 0.25)")
    if cfg.observable_id not in ("cos1", "coord", "bump"):
        fail("observable_id", f"unknown observable {cfg.observable_id!r}")
    if cfg.observable_id == "bump":
        if cfg.bump_a is None or cfg.bump_a <= 0.0:
            fail("bump_a", "bump needs ramp width a > 0")
        if cfg.bump_w is None or cfg.bump_w < 0.0:
            fail("bump_w", "bump needs plateau width w >= 0")
    if not cfg.alphas:
        fail("alphas", "need at least one threshold")
    for a in cfg.alphas:
        if not math.isfinite(a):
            fail("alphas", f"threshold {a} is not finite")
    if cfg.n_min < 1:
        fail("n_min", "must be >= 1")
    if cfg.n_max < cfg.n_min:
        fail("n_max", f"must be >= n_min={cfg.n_min}")
    if cfg.n_stride < 1:
        fail("n_stride", "must be >= 1")
    if cfg.sample_count < 1000:
        fail("sample_count", "must be >= 1000")
    if cfg.seed < 0:
        fail("seed", "must be >= 0")
    if cfg.space_samples < 2:
        fail("space_samples", "must be >= 2")
    if cfg.orbit_length < 100:
        fail("orbit_length", "must be >= 100")
    if cfg.transient < 0:
        fail("transient", "must be >= 0")
    if cfg.cover_n_max >= cfg.cover_n_min and cfg.cover_n_min >= 1:
        if cfg.grid_budget < 1:
            fail("grid_budget", "must be >= 1")
    if cfg.verdict_slack < 0.0:
        fail("verdict_slack", "must be >= 0")
    if cfg.delta_override < 0.0:
        fail("delta_override", "must be >= 0 (0 means: use the modulus)")
    if cfg.lemma_pairs < 0:
        fail("lemma_pairs", "must be >= 0")
    if cfg.lemma_pairs > 0 and cfg.lemma_n < 1:
        fail("lemma_n", "must be >= 1")
    if cfg.flow_enabled:
        if cfg.roof_kind not in ("constant", "cosine"):
            fail("roof_kind", f"unknown roof {cfg.roof_kind!r}")
        if cfg.roof_kind == "constant" and cfg.roof_param <= 0.0:
            fail("roof_param", "constant roof must be positive")
        if cfg.roof_kind == "cosine" and not abs(cfg.roof_param) < 1.0:
            fail("roof_param", "cosine roof needs |a| < 1")
        if cfg.flow_T <= 0.0:
            fail("flow_T", "must be > 0")
        if cfg.flow_samples < 1:
            fail("flow_samples", "must be >= 1")
        if cfg.quadrature_step < 0.0:
            fail("quadrature_step", "must be >= 0 (0 means: rho_min / 8)")


# ---------------------------------------------------------------------------
# INI round-trip

_SECTIONS = {
    "system": ("system_id", "system_c"),
    "observable": ("observable_id", "bump_a", "bump_w"),
    "deviation": ("alphas", "n_min", "n_max", "n_stride", "sample_count", "seed"),
    "space_average": ("space_samples", "orbit_length", "transient"),
    "dimension": ("cover_n_min", "cover_n_max", "grid_budget", "dprime_offsets",
                  "verdict_slack", "delta_override"),
    "lemma": ("lemma_n", "lemma_pairs"),
    "flow": ("flow_enabled", "roof_kind", "roof_param", "flow_T", "flow_samples",
             "quadrature_step"),
    "output": ("out_dir",),
}

def _format_value(v):
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(name, raw):
    raw = raw.strip()
    if name in ("alphas", "dprime_offsets"):
        if not raw:
            return ()
        return tuple(float(tok) for tok in raw.split(","))
    if name in ("system_c", "bump_a", "bump_w"):
        if raw.lower() in ("", "none"):
            return None
        return float(raw)
    if name == "flow_enabled":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValidationError(f"flow_enabled: cannot parse {raw!r} as a boolean")
    default = getattr(ExperimentConfig(), name)
    if isinstance(default, bool):
        return raw.lower() == "true"
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ValidationError(f"{name}: cannot parse {raw!r} as an integer") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ValidationError(f"{name}: cannot parse {raw!r} as a number") from None
    return raw


def config_to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for section, names in _SECTIONS.items():
        cp[section] = {}
        for name in names:
            v = getattr(cfg, name)
            if v is None:
                continue
            cp[section][name] = _format_value(v)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_ini(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ValidationError(f"config: INI parse error: {e}") from None
    known = {name: section for section, names in _SECTIONS.items() for name in names}
    kwargs = {}
    for section in cp.sections():
        for name, raw in cp[section].items():
            if name not in known:
                raise ValidationError(f"{name}: unknown config field (section [{section}])")
            if known[name] != section:
                raise ValidationError(f"{name}: belongs in section [{known[name]}], found in [{section}]")
            kwargs[name] = _parse_value(name, raw)
    cfg = ExperimentConfig(**kwargs)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as e:
        raise ValidationError(f"config: cannot read {path}: {e}") from None
    return config_from_ini(text)


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class Report:
    """Deterministic payload plus wall-clock timings kept apart."""

    data: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def report_json(report: Report, include_timings: bool = True) -> str:
    obj = dict(report.data)
    if include_timings:
        obj["timings"] = report.timings
    return json.dumps(obj, sort_keys=True, indent=2)


def _fit_dict(fit):
    return {"C": fit.C, "h": fit.h, "fit_window": list(fit.fit_window),
            "r_squared": fit.r_squared, "residual_max": fit.residual_max,
            "dropped_zero_entries": fit.dropped_zero_entries}


def _resolve(cfg: ExperimentConfig):
    if cfg.system_id == "logistic":
        sys = get_system("logistic", c=cfg.system_c)
    else:
        sys = get_system(cfg.system_id)
    if cfg.observable_id == "bump":
        obs = get_observable("bump", sys, a=cfg.bump_a, w=cfg.bump_w)
    else:
        obs = get_observable(cfg.observable_id, sys)
    return sys, obs


def _n_values(cfg: ExperimentConfig):
    return list(range(cfg.n_min, cfg.n_max + 1, cfg.n_stride))


def run_pipeline(cfg: ExperimentConfig, threads: int = 1, stages=None) -> Report:
    """Run the requested stages and assemble a report.

    A stage failure raises StageError with the partial report attached as
    `.partial_report` (its data records the failed stage), so callers can
    flush what was computed.
    """
    validate_config(cfg)
    wanted = set(STAGES if stages is None else stages)
    report = Report()
    report.data["failed_stage"] = None
    ctx = {}

    def run_stage(name, fn):
        if name not in wanted:
            return
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as e:
            report.data["failed_stage"] = name
            err = StageError(name, e)
            err.partial_report = report
            raise err from e
        report.timings[name] = time.perf_counter() - t0

    def st_resolve():
        sys, obs = _resolve(cfg)
        ctx["sys"], ctx["obs"] = sys, obs
        cfg_dict = {}
        for f in fields(ExperimentConfig):
            v = getattr(cfg, f.name)
            cfg_dict[f.name] = list(v) if isinstance(v, tuple) else v
        report.data["config"] = cfg_dict
        report.data["system"] = {"id": sys.sid, "d": sys.d, "domain": sys.domain,
                                 "lip": sys.lip, "L": sys.L,
                                 "params": dict(sys.params)}
        report.data["observable"] = {"id": obs.oid, "lip": obs.lip,
                                     "sup_abs": obs.sup_abs, "params": dict(obs.params)}

    def st_space_average():
        sys, obs = ctx["sys"], ctx["obs"]
        sa = srb_space_average(sys, obs, cfg.seed, samples=cfg.space_samples,
                               orbit_length=cfg.orbit_length, transient=cfg.transient)
        ctx["phibar"] = sa.value
        report.data["space_average"] = {
            "value": sa.value, "std_error": sa.std_error, "method": sa.method,
            "sample_count": sa.sample_count, "orbit_length": sa.orbit_length,
            "transient": sa.transient, "seed_point": sa.seed_point}

    def st_ladders():
        sys, obs = ctx["sys"], ctx["obs"]
        alpha_set = []
        for a in list(cfg.alphas) + [a / 2.0 for a in cfg.alphas]:
            if a not in alpha_set:
                alpha_set.append(a)
        ladders = build_deviation_ladders(sys, obs, ctx["phibar"], alpha_set,
                                          _n_values(cfg), cfg.sample_count,
                                          cfg.seed, threads)
        ctx["ladders"] = ladders
        report.data["ladders"] = {repr(a): {"entries": ladder_rows(lad)}
                                  for a, lad in ladders.items()}

    def st_fits():
        fits = {}
        for a, lad in ctx["ladders"].items():
            try:
                fits[a] = fit_rate_function(lad)
            except ValueError as e:
                fits[a] = None
                report.data["ladders"][repr(a)]["fit"] = {"error": str(e)}
            if fits[a] is not None:
                report.data["ladders"][repr(a)]["fit"] = _fit_dict(fits[a])
        ctx["fits"] = fits

    def st_cover():
        sys, obs = ctx["sys"], ctx["obs"]
        if not (cfg.cover_n_min >= 1 and cfg.cover_n_max >= cfg.cover_n_min):
            ctx["cover"] = None
            report.data["cover"] = None
            return
        alpha = cfg.alphas[0]
        delta = cfg.delta_override or modulus_delta_for(sys, obs, max(alpha, 1e-12))
        d0 = ctx.get("d0")
        dprimes = tuple(d0 + off for off in cfg.dprime_offsets) if d0 is not None else ()
        ladder = build_cover_ladder(sys, obs, ctx["phibar"], alpha, delta,
                                    cfg.cover_n_min, cfg.cover_n_max,
                                    budget=cfg.grid_budget, dprimes=dprimes,
                                    threads=threads)
        ctx["cover"] = ladder
        report.data["cover"] = {
            "alpha": ladder.alpha, "delta": ladder.delta, "L": ladder.L,
            "examined_cells": ladder.examined_cells,
            "dprimes": list(ladder.dprimes),
            "entries": [{"n": e.n, "r_n": e.r_n, "card": e.card,
                         "volumes": {repr(dp): v for dp, v in e.volumes}}
                        for e in ladder.entries]}

    def st_dimension_pre():
        # d0 from the fitted rate at alpha/2; needed before the cover stage
        # so the d'-volume columns can be pinned to d0 + offsets
        sys, obs = ctx["sys"], ctx["obs"]
        alpha = cfg.alphas[0]
        half = alpha / 2.0
        fit_half = ctx["fits"].get(half)
        fit_full = ctx["fits"].get(alpha)
        d0 = None
        reason = None
        if fit_half is None:
            reason = "no usable rate fit at alpha/2"
        else:
            try:
                d0 = dimension_upper_bound(sys.d, sys.L, fit_half.h)
            except RateNotEstablishedError as e:
                reason = str(e)
        ctx["d0"] = d0
        ctx["d0_reason"] = reason
        ctx["h_half"] = fit_half.h if fit_half is not None else None
        ctx["h_alpha"] = fit_full.h if fit_full is not None else None

    def st_dimension():
        sys, obs = ctx["sys"], ctx["obs"]
        alpha = cfg.alphas[0]
        d0 = ctx.get("d0")
        cover = ctx.get("cover")
        box = try_box_dimension(cover) if cover is not None else None
        series = []
        if cover is not None and cover.dprimes:
            series = [dprime_volume_series(cover, dp) for dp in cover.dprimes]
        if alpha > 2.0 * obs.sup_abs:
            verdict = VERDICT_INCONCLUSIVE
            reason = "deviation set is empty at this threshold"
        elif d0 is None:
            verdict = VERDICT_INCONCLUSIVE
            reason = ctx.get("d0_reason") or "no dimension bound available"
        elif box is None:
            verdict = VERDICT_INCONCLUSIVE
            reason = "cover ladder cannot support a box-dimension fit"
        elif box.upper <= d0 + cfg.verdict_slack:
            verdict, reason = VERDICT_HOLDS, None
        elif box.lower > d0 + cfg.verdict_slack:
            verdict, reason = VERDICT_VIOLATED, None
        else:
            verdict = VERDICT_INCONCLUSIVE
            reason = "box-dimension band straddles the bound"
        report.data["dimension"] = {
            "d": sys.d, "L": sys.L, "alpha": alpha,
            "h_half": ctx.get("h_half"), "h_alpha": ctx.get("h_alpha"),
            "d0": d0,
            "box": None if box is None else {"value": box.value, "lower": box.lower,
                                             "upper": box.upper},
            "dprime_series": [{"dprime": s.dprime, "partial_sum": s.partial_sum,
                               "converges": s.converges} for s in series],
            "verdict": verdict, "verdict_reason": reason,
            "slack": cfg.verdict_slack}
        report.data["verdict"] = verdict

    def st_lemma():
        sys, obs = ctx["sys"], ctx["obs"]
        if cfg.lemma_pairs < 1:
            report.data["lemma"] = None
            return
        alpha = cfg.alphas[0]
        delta = cfg.delta_override or modulus_delta_for(sys, obs, max(alpha, 1e-12))
        rep = verify_ball_lemma(sys, obs, ctx["phibar"], alpha, delta,
                                cfg.lemma_n, cfg.lemma_pairs, cfg.seed)
        report.data["lemma"] = {
            "alpha": rep.alpha, "n": rep.n, "delta": rep.delta, "radius": rep.radius,
            "pairs_requested": rep.pairs_requested, "pairs_checked": rep.pairs_checked,
            "candidates_drawn": rep.candidates_drawn, "violations": rep.violations,
            "worst_margin": rep.worst_margin if math.isfinite(rep.worst_margin) else None,
            "inconclusive": rep.inconclusive}

    def st_flow():
        sys, obs = ctx["sys"], ctx["obs"]
        if not cfg.flow_enabled:
            report.data["flow"] = None
            return
        roof = constant_roof(cfg.roof_param) if cfg.roof_kind == "constant" \
            else cosine_roof(cfg.roof_param)
        flow = SuspensionFlow(sys, roof)
        fobs = fiber_constant(obs)
        qstep = cfg.quadrature_step or None
        alpha = cfg.alphas[0]
        phibar = ctx["phibar"]
        states, extra = sample_flow_states(flow, cfg.seed, 0, cfg.flow_samples)
        int_ok = 0
        worst_excess = -math.inf
        inc_ok = 0
        vacuous = 0
        t_min_incl = 4.0 * fobs.sup_abs / alpha
        for i, st in enumerate(states):
            # per-state fractional horizon in [2, flow_T] for the integer check
            Ti = 2.0 + (cfg.flow_T - 2.0) * float(extra[i]) if cfg.flow_T > 2.0 else 2.0
            chk = integer_part_reduction_check(flow, fobs, st, Ti, qstep)
            int_ok += chk.ok
            worst_excess = max(worst_excess, chk.lhs - chk.bound)
            if cfg.flow_T >= t_min_incl:
                inc = flow_nontypical_inclusion_check(flow, fobs, phibar, alpha,
                                                      st, cfg.flow_T, qstep)
                inc_ok += inc.ok
                vacuous += inc.vacuous
        lip1 = estimate_time1_lipschitz(flow, min(2000, 2 * cfg.flow_samples), cfg.seed)
        report.data["flow"] = {
            "roof": {"kind": roof.kind, "params": dict(roof.params),
                     "rho_min": roof.rho_min, "rho_max": roof.rho_max},
            "T": cfg.flow_T, "samples": cfg.flow_samples,
            "integer_part": {"ok": int_ok, "count": len(states),
                             "worst_excess": worst_excess},
            "inclusion": None if cfg.flow_T < t_min_incl else
                         {"ok": inc_ok, "count": len(states), "vacuous": vacuous},
            "time1_lipschitz": lip1}

    run_stage("resolve", st_resolve)
    run_stage("space_average", st_space_average)
    run_stage("ladders", st_ladders)
    run_stage("fits", st_fits)
    if "fits" in wanted:
        st_dimension_pre()
    run_stage("cover", st_cover)
    run_stage("dimension", st_dimension)
    run_stage("lemma", st_lemma)
    run_stage("flow", st_flow)
    return report


def write_artifacts(report: Report, out_dir, fmt: str = "json"):
    """Write report.json (always) and, for fmt='csv', the tabular artifacts."""
    import csv as _csv
    import os
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    rpath = os.path.join(out_dir, "report.json")
    with open(rpath, "w") as fh:
        fh.write(report_json(report))
        fh.write("\n")
    paths.append(rpath)
    if fmt != "csv":
        return paths
    for key, lad in (report.data.get("ladders") or {}).items():
        path = os.path.join(out_dir, f"ladder_alpha_{key}.csv")
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(("n", "measure", "std_error", "samples", "method"))
            for e in lad["entries"]:
                w.writerow([e["n"], repr(e["measure"]), repr(e["std_error"]),
                            e["samples"], e["method"]])
        paths.append(path)
    cov = report.data.get("cover")
    if cov:
        path = os.path.join(out_dir, "cover.csv")
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["n", "r_n", "card"] +
                       [f"volume_dprime_{dp:g}" for dp in cov["dprimes"]])
            for e in cov["entries"]:
                w.writerow([e["n"], repr(e["r_n"]), e["card"]] +
                           [repr(e["volumes"][repr(dp)]) for dp in cov["dprimes"]])
        paths.append(path)
    return paths
