"""Validation, Monte Carlo sweeps over (lambda, kernel), CSP statistics and lemma reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, List, Optional

import numpy as np
from scipy import stats

from . import lemma_lab
from .config import ConfigError, RunConfig, SweepConfig
from .kernels import EmbeddingDefectError, KernelError, check_reinforced_dalang, parse_kernel_spec
from .noise import Grid, build_sampler
from .observables import csp_indicator, write_trajectory_csv
from .solver import CoefficientError, cfl_max_dt, simulate, validate_coefficients

__all__ = [
    "validate_run",
    "run_sweep",
    "estimate_csp_probability",
    "wilson_interval",
    "lemma_suite",
    "format_report",
    "MIN_RELIABLE_REPLICAS",
]

log = logging.getLogger(__name__)

MIN_RELIABLE_REPLICAS = 30


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_run(config: RunConfig, kernel_spec: Optional[str] = None) -> List[str]:
    """Run every pre-flight check; return warnings, raise :class:`ConfigError` on failure.

    Checks, in order: kernel construction, reinforced Dalang condition for
    the kernel and ``eta``, ellipticity/coefficient bounds, time step against
    the stability bound, and the circulant-embedding defect.
    """
    warnings = []
    spec = kernel_spec or config.kernel
    try:
        kernel = parse_kernel_spec(spec, config.dim, base_dir=config.base_dir)
    except (KernelError, OSError) as exc:
        raise ConfigError(str(exc), "kernel") from exc
    if not 0 < config.eta <= 1:
        raise ConfigError(f"eta={config.eta} must lie in (0, 1]", "dalang")
    dal = check_reinforced_dalang(kernel, config.eta, config.dim)
    if not dal.converged:
        raise ConfigError(f"reinforced Dalang condition fails for {spec} at eta={config.eta} "
                          f"(tail exponent {dal.tail_exponent:.3g})", "dalang")
    grid = config.build_grid()
    coeffs = config.build_coefficients()
    try:
        validate_coefficients(coeffs, grid, times=(0.0, config.T))
    except CoefficientError as exc:
        raise ConfigError(str(exc), "ellipticity") from exc
    limit = cfl_max_dt(coeffs, grid)
    if config.dt is not None and config.dt > 0.9 * limit:
        raise ConfigError(f"dt={config.dt} exceeds 0.9 * stability bound {limit:.6g}", "cfl")
    if config.noise:
        try:
            build_sampler(kernel, grid, config.seed)
        except EmbeddingDefectError as exc:
            raise ConfigError(str(exc), "embedding") from exc
    reach = 4.0 * config.R0 + 4.0 * math.sqrt(2.0 * config.coeff_K * config.T)
    if config.L < reach:
        warnings.append(f"box half-extent L={config.L} is below 4 R0 + 4 sqrt(2 K T) = {reach:.3g}; "
                        "periodic wrap may contaminate support statistics")
    return warnings


# ---------------------------------------------------------------------------
# Wilson intervals and aggregation
# ---------------------------------------------------------------------------

def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def estimate_csp_probability(records: Iterable[dict], min_replicas: int = MIN_RELIABLE_REPLICAS) -> List[dict]:
    """Bounded-support fraction with a Wilson 95% interval per (kernel, lambda, eps).

    Cells with fewer than ``min_replicas`` replicas are flagged unreliable.
    """
    cells = {}
    for rec in records:
        for eps, ok in rec["bounded"].items():
            key = (rec["kernel"], rec["lambda"], float(eps))
            k, n = cells.get(key, (0, 0))
            cells[key] = (k + bool(ok), n + 1)
    out = []
    for (kernel, lam, eps), (k, n) in sorted(cells.items()):
        lo, hi = wilson_interval(k, n)
        out.append({"kernel": kernel, "lambda": lam, "eps_rel": eps, "bounded": k, "replicas": n,
                    "fraction": k / n, "ci_low": lo, "ci_high": hi, "reliable": n >= min_replicas,
                    "regime": "csp-failure" if lam >= 1 else "sublinear"})
    return out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

_SAMPLERS = {}


def _sampler_for(cfg: RunConfig):
    key = (cfg.kernel, cfg.dim, cfg.n, cfg.L, cfg.seed, cfg.base_dir)
    if key not in _SAMPLERS:
        _SAMPLERS[key] = build_sampler(cfg.build_kernel(), cfg.build_grid(), cfg.seed)
    return _SAMPLERS[key]


def cell_name(kernel: str, lam: float) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "._=-" else "_" for ch in kernel)
    return f"{safe}__lambda{lam:g}"


def _run_replica(task) -> dict:
    cfg_dict, base_dir, kernel, lam, replica, R_max, cell_dir = task
    cfg = RunConfig.from_dict(cfg_dict, base_dir).with_(kernel=kernel, lam=lam)
    sampler = _sampler_for(cfg) if cfg.noise else None
    traj = simulate(cfg, replica, sampler=sampler, on_blowup="record")
    peak0 = float(cfg.build_initial().on(cfg.build_grid()).max())
    bounded = {}
    final_radius = {}
    for rel, eps in zip(cfg.eps_rel, traj.metadata["eps"]):
        bounded[repr(float(rel))] = csp_indicator(traj, eps, R_max)
        final_radius[repr(float(rel))] = traj.support_radius[float(eps)][-1]
    if cell_dir is not None:
        write_trajectory_csv(os.path.join(cell_dir, f"replica_{replica:04d}.csv"), traj)
    return {"kernel": kernel, "lambda": lam, "replica": replica, "bounded": bounded,
            "final_support_radius": final_radius, "clipped_mass": traj.clipped_mass,
            "blowup": traj.blowup is not None, "blowup_step": None if traj.blowup is None else traj.blowup["step"],
            "initial_max": peak0}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_sweep(sweep: SweepConfig, workers: int = 1, out: Optional[str] = None) -> dict:
    """Validate, run every (kernel, lambda, replica) and write the sweep outputs.

    Layout under ``out``: one directory per cell with ``replica_XXXX.csv``
    trajectories, ``sweep.csv`` (one row per replica), ``csp.csv`` (one row
    per cell and threshold) and ``summary.json``.  Outputs depend only on the
    configuration, never on ``workers``.
    """
    out = out or sweep.out
    base = sweep.base
    for kernel in sweep.kernels:
        for w in validate_run(base.with_(kernel=kernel), kernel):
            log.warning(w)
    os.makedirs(out, exist_ok=True)
    tasks = []
    for kernel in sweep.kernels:
        for lam in sweep.lambdas:
            cell_dir = None
            if sweep.write_trajectories:
                cell_dir = os.path.join(out, cell_name(kernel, lam))
                os.makedirs(cell_dir, exist_ok=True)
            for rep in range(sweep.replicas):
                tasks.append((base.to_dict(), base.base_dir, kernel, float(lam), rep, sweep.R_max, cell_dir))
    if workers <= 1:
        records = [_run_replica(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_replica, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    table = estimate_csp_probability(records)
    _write_sweep_csv(os.path.join(out, "sweep.csv"), records, base.eps_rel)
    _write_csp_csv(os.path.join(out, "csp.csv"), table)
    summary = {
        "config": sweep.to_dict(),
        "config_digest": base.digest(),
        "cells": table,
        "blowups": sum(r["blowup"] for r in records),
        "replicas_total": len(records),
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return summary


def _write_sweep_csv(path, records, eps_rel):
    keys = [repr(float(e)) for e in eps_rel]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kernel", "lambda", "replica"] + [f"bounded_eps{k}" for k in keys]
                   + [f"final_radius_eps{k}" for k in keys] + ["clipped_mass", "blowup", "blowup_step"])
        for r in records:
            w.writerow([r["kernel"], _fmt(r["lambda"]), r["replica"]]
                       + [_fmt(r["bounded"][k]) for k in keys]
                       + [_fmt(r["final_support_radius"][k]) for k in keys]
                       + [_fmt(r["clipped_mass"]), _fmt(r["blowup"]), _fmt(r["blowup_step"])])


def _write_csp_csv(path, table):
    cols = ["kernel", "lambda", "eps_rel", "bounded", "replicas", "fraction", "ci_low", "ci_high", "reliable", "regime"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in table:
            w.writerow([_fmt(row[c]) for c in cols])


def format_report(summary: dict) -> str:
    """Plain-text table of bounded-support fractions from a sweep summary."""
    buf = io.StringIO()
    buf.write(f"{'kernel':<22} {'lambda':>7} {'eps_rel':>8} {'frac':>6} {'95% CI':>17} {'n':>4}  note\n")
    for c in summary["cells"]:
        note = []
        if c["regime"] == "csp-failure":
            note.append("lambda>=1")
        if not c["reliable"]:
            note.append("unreliable (<30 replicas)")
        buf.write(f"{c['kernel']:<22} {c['lambda']:>7g} {c['eps_rel']:>8.0e} {c['fraction']:>6.3f} "
                  f"[{c['ci_low']:.3f}, {c['ci_high']:.3f}] {c['replicas']:>4}  {', '.join(note)}\n")
    buf.write(f"blow-ups: {summary['blowups']} of {summary['replicas_total']} replicas\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# lemma suite
# ---------------------------------------------------------------------------

_LEMMA_DEFAULTS = {
    "seed": 7,
    "exponents": {"points": 10},
    "reverse_jensen_x": {"gamma": 0.5, "lambda": 0.5, "H": 2.0, "R": 2.0, "a": 0.0, "b": 1.0,
                         "samples": 200, "nodes": 32, "refine": 4, "dims": [1, 2]},
    "reverse_jensen_t": {"gamma": 0.5, "lambda": 0.5, "H": 2.0, "T": 1.0, "samples": 200, "nodes": 256,
                         "refine": 4},
    "covariance_bound": {"kernels": ["white", "riesz:alpha=0.5", "ou:beta=1", "ou:beta=2", "constant",
                                     "bump:r=0.5,amp=1"],
                         "dims": [1, 2], "n": {"1": 256, "2": 64}, "L": 8.0, "eps": 0.25, "samples": 100,
                         "phi_scale": 1.0},
    "cutoff": {"lambda": 0.5, "K": 1.0, "n_list": [10, 100, 1000]},
    "weight": {"a": [0.5, 1.0, 2.0], "n": 256, "L": 8.0},
}


def _merge(defaults: dict, override: dict) -> dict:
    out = dict(defaults)
    for k, v in (override or {}).items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=float)
        fh.write("\n")


def lemma_suite(params: Optional[dict] = None, out: str = "lemma_reports") -> dict:
    """Run the lemma battery and write one JSON report per family.

    Returns a dict of family -> pass flag.  Covariance-bound violations are
    the zero-tolerance failures; callers turn them into exit code 3.
    """
    p = _merge(_LEMMA_DEFAULTS, params or {})
    os.makedirs(out, exist_ok=True)
    rng = np.random.default_rng(p["seed"])
    status = {}

    # exponent identities
    m = p["exponents"]["points"]
    grid_pts = np.linspace(0.0, 1.0, m + 2)[1:-1]
    worst, rows = 0.0, 0
    for gmm in grid_pts:
        for lam in grid_pts:
            for d in range(1, m + 1):
                e = lemma_lab.exponents(gmm, lam, d)
                worst = max(worst, e.identity_error)
                rows += 1
    status["exponents"] = worst <= 1e-14
    _dump(os.path.join(out, "exponents.json"), {"lemma": "exponents", "points": rows, "max_identity_error": worst,
                                                "holds": status["exponents"]})

    # reverse Jensen in space
    q = p["reverse_jensen_x"]
    xrep = {"lemma": "reverse_jensen_x", "params": q, "cases": []}
    ok = True
    for d in q["dims"]:
        period = 2.0 * (q["R"] + q["b"])
        samples = [lemma_lab.holder_sample(rng, q["gamma"], q["H"], d, period=period) for _ in range(q["samples"])]
        maxima = []
        for nodes in (q["nodes"], q["nodes"] * q["refine"]):
            ratios = [lemma_lab.reverse_jensen_x(s, q["R"], None, q["a"], q["b"], q["gamma"], q["lambda"], q["H"],
                                                 d, nodes)["ratio"] for s in samples]
            maxima.append(max(ratios))
        stable = bool(np.isfinite(maxima).all() and max(maxima) / min(maxima) < 2.0)
        ok &= stable
        xrep["cases"].append({"d": d, "max_ratio": maxima, "resolutions": [q["nodes"], q["nodes"] * q["refine"]],
                              "max_measured_H": max(s.measured_H for s in samples), "holds": stable})
    status["reverse_jensen_x"] = ok
    xrep["holds"] = ok
    _dump(os.path.join(out, "reverse_jensen_x.json"), xrep)

    # reverse Jensen in time
    q = p["reverse_jensen_t"]
    samples = [lemma_lab.holder_sample(rng, q["gamma"], q["H"], 1, period=2.0 * q["T"], mode="anchor")
               for _ in range(q["samples"])]
    maxima = []
    for nodes in (q["nodes"], q["nodes"] * q["refine"]):
        maxima.append(max(lemma_lab.reverse_jensen_t(s, q["T"], q["gamma"], q["lambda"], q["H"], nodes)["ratio"]
                          for s in samples))
    extremal = lemma_lab.extremal_profile_check(q["gamma"], q["lambda"], q["H"])
    stable = bool(np.isfinite(maxima).all() and max(maxima) / min(maxima) < 2.0)
    status["reverse_jensen_t"] = stable and extremal["holds"]
    _dump(os.path.join(out, "reverse_jensen_t.json"),
          {"lemma": "reverse_jensen_t", "params": q, "max_ratio": maxima, "extremal": extremal,
           "holds": status["reverse_jensen_t"]})

    # covariance lower bound (zero tolerance)
    q = p["covariance_bound"]
    cases = []
    violations = 0
    for d in q["dims"]:
        grid = Grid(d, int(q["n"][str(d)]), float(q["L"]))
        for spec in q["kernels"]:
            kernel = parse_kernel_spec(spec, d)
            phi = lemma_lab.build_phi(kernel, q["eps"], grid, phi_scale=q["phi_scale"])
            fails = 0
            worst_ratio = 0.0
            for _ in range(q["samples"]):
                rep = lemma_lab.covariance_lower_bound_check(lemma_lab.random_compact_field(rng, grid), phi,
                                                             kernel, grid)
                fails += not rep["holds"]
                worst_ratio = max(worst_ratio, rep["ratio"])
            violations += fails
            cases.append({"kernel": spec, "d": d, "c": phi.c, "r": phi.r, "phi_norm2": phi.norm2,
                          "f_eps0": phi.f_eps0, "failures": fails, "max_rhs_over_lhs": worst_ratio})
    status["covariance_bound"] = violations == 0
    _dump(os.path.join(out, "covariance_bound.json"),
          {"lemma": "covariance_lower_bound", "params": q, "cases": cases, "violations": violations,
           "holds": status["covariance_bound"]})

    # cutoff
    q = p["cutoff"]
    cut = lemma_lab.cutoff_properties_check(q["lambda"], q["K"], q["n_list"])
    status["cutoff"] = cut["holds"]
    _dump(os.path.join(out, "cutoff.json"), cut)

    # weight derivative
    q = p["weight"]
    reps = [lemma_lab.weight_derivative_check(Grid(d, q["n"] if d == 1 else q["n"] // 2, q["L"]), a)
            for d in (1, 2) for a in q["a"]]
    status["weight"] = all(r["holds"] for r in reps)
    _dump(os.path.join(out, "weight.json"), {"lemma": "weight_derivative", "cases": reps, "holds": status["weight"]})

    _dump(os.path.join(out, "lemma_summary.json"), status)
    return status
