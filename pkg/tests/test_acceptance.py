"""End-to-end acceptance gate: ten criteria at their stated tolerances."""

import math
import os
import time

import numpy as np
import pytest

from csplab.config import SweepConfig
from csplab.harness import run_sweep
from csplab.kernels import CorrelationKernel, check_local_integrability, check_reinforced_dalang, parse_kernel_spec
from csplab.lemma_lab import (
    build_phi,
    covariance_lower_bound_check,
    cutoff_properties_check,
    exponents,
    extremal_profile_check,
    holder_sample,
    random_compact_field,
    reverse_jensen_t,
    reverse_jensen_x,
)
from csplab.noise import Grid, build_sampler, covariance_row, empirical_covariance
from csplab.solver import (
    Coefficients,
    DiffusionFn,
    SolverState,
    cfl_max_dt,
    step,
    time_grid,
)

pytestmark = pytest.mark.slow

DEFAULT_SWEEP = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "default_sweep.yaml")
CATALOG = ["white", "riesz:alpha=0.5", "ou:beta=1", "ou:beta=2", "constant", "bump:r=0.5,amp=1"]


# --- 1 --------------------------------------------------------------------

def _closed_form_finite(kind, param, eta, d):
    if kind == "white":
        return d == 1 and eta < 0.5
    if kind == "riesz":
        return param < 2 - 2 * eta
    return True  # OU, constant, bump: bounded kernels


def test_criterion_1_dalang_lattice(criterion):
    t0 = time.perf_counter()
    cases = [("white", None)] + [("riesz", a) for a in (0.5, 1.0, 1.5)] + [("ou", b) for b in (1.0, 2.0)] \
        + [("constant", None), ("bump", None)]
    checked, disagreements = 0, []
    for d in (1, 2):
        for kind, param in cases:
            if kind == "riesz" and param >= min(2, d):
                continue  # inadmissible, rejected at construction
            kernel = {"white": lambda: CorrelationKernel.white(d),
                      "riesz": lambda: CorrelationKernel.riesz(param, d),
                      "ou": lambda: CorrelationKernel.ou(param, d),
                      "constant": lambda: CorrelationKernel.constant(d),
                      "bump": lambda: CorrelationKernel.bump(0.5, 1.0, d)}[kind]()
            for eta in np.round(np.arange(0.1, 1.0, 0.1), 10):
                a = check_reinforced_dalang(kernel, eta, d).converged
                b = check_local_integrability(kernel, eta, d).converged
                c = _closed_form_finite(kind, param, eta, d)
                checked += 1
                if not a == b == c:
                    disagreements.append((kind, param, eta, d, a, b, c))
    ok = not disagreements and time.perf_counter() - t0 < 60
    criterion(1, ok, f"{checked} lattice points, {len(disagreements)} disagreements "
                     f"({time.perf_counter() - t0:.1f}s)")
    assert ok, disagreements


# --- 2 --------------------------------------------------------------------

def test_criterion_2_noise_covariance(criterion):
    t0 = time.perf_counter()
    failures = []
    for d, n, lags in ((1, 256, [0, 1, 2, 4, 8]), (2, 128, [(0, 0), (1, 0), (0, 2), (1, 1), (3, 2)])):
        grid = Grid(d, n, 8.0)
        for spec in CATALOG:
            s = build_sampler(parse_kernel_spec(spec, d), grid)
            within = sum(abs(e.zscore) <= 3 for e in empirical_covariance(s, 10_000, lags))
            delta = np.zeros(grid.shape)
            delta[(0,) * d] = 1.0
            implied = s.apply_sqrt(s.apply_sqrt(delta))
            ident = np.abs(implied - s.clipped_row).max() / np.abs(s.clipped_row).max()
            if within < 4 or ident > 1e-10:
                failures.append((spec, d, within, ident))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    criterion(2, ok, f"{2 * len(CATALOG)} kernel/dim cases, failures {failures} ({elapsed:.1f}s)")
    assert ok


# --- 3 --------------------------------------------------------------------

def test_criterion_3_solver_oracles(criterion):
    g = Grid(1, 64, 3.2)
    lap = Coefficients.laplacian(1)
    dt = 0.9 * cfl_max_dt(lap, g)
    r = dt / g.dx ** 2
    eye = np.eye(64)
    M = (1 - 2 * r) * eye + r * (np.roll(eye, 1, 0) + np.roll(eye, -1, 0))
    u0 = np.exp(-np.arange(64) / 8.0) * (np.arange(64) % 7)
    state = SolverState(g, u0.copy())
    for _ in range(50):
        state = step(state, lap, DiffusionFn(0.5), None, dt)
    heat_err = float(np.abs(state.field - np.linalg.matrix_power(M, 50) @ u0).max())
    mass_err = abs(state.field.sum() - u0.sum()) / u0.sum()

    decay = Coefficients(1, lambda t, x: np.zeros((1, 1)), lambda t, x: np.zeros(1), lambda t, x: -1.0, 1.0)
    n, dt2 = time_grid(decay, g, 1.0)
    st = SolverState(g, np.ones(64))
    for _ in range(n):
        st = step(st, decay, DiffusionFn(0.5), None, dt2)
    decay_err = float(np.abs(st.field - math.exp(-1.0)).max())
    ok = heat_err <= 1e-12 and mass_err <= 1e-10 and decay_err <= 5 * dt2
    criterion(3, ok, f"heat {heat_err:.1e} (<=1e-12), mass {mass_err:.1e} (<=1e-10), "
                     f"decay {decay_err:.2e} (<= 5dt = {5 * dt2:.2e})")
    assert ok


# --- 4 --------------------------------------------------------------------

def test_criterion_4_positivity_absorption(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    lap = Coefficients.laplacian(1)
    grid = Grid(1, 64, 4.0)
    samplers = [build_sampler(parse_kernel_spec(s, 1), grid, seed) for seed, s in enumerate(CATALOG)]
    dt = 0.9 * cfl_max_dt(lap, grid)
    negative = nonzero = 0
    for run in range(1000):
        s = samplers[run % len(samplers)]
        h = DiffusionFn(float(rng.uniform(0.01, 0.99)))
        u0 = rng.uniform(0, 2, 64) * (rng.uniform(size=64) < 0.5)
        state, zero = SolverState(grid, u0), SolverState(grid, np.zeros(64))
        for _ in range(5):
            state = step(state, lap, h, s, dt, replica=run)
            zero = step(zero, lap, h, s, dt, replica=run)
            negative += int((state.field < 0).any())
            nonzero += int(zero.field.any())
    elapsed = time.perf_counter() - t0
    ok = negative == 0 and nonzero == 0 and elapsed < 120
    criterion(4, ok, f"1000 runs x 5 steps: negative steps {negative}, zero field disturbed {nonzero} "
                     f"({elapsed:.1f}s)")
    assert ok


# --- 5 and 10 share the default sweep -------------------------------------

@pytest.fixture(scope="module")
def default_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep_w1")
    t0 = time.perf_counter()
    summary = run_sweep(SweepConfig.load(DEFAULT_SWEEP), workers=1, out=str(out))
    return out, summary, time.perf_counter() - t0


def test_criterion_5_csp_trend(criterion, default_sweep):
    _, summary, elapsed = default_sweep
    rows = sorted((c for c in summary["cells"] if c["eps_rel"] == 1e-8), key=lambda c: c["lambda"])
    lams = [c["lambda"] for c in rows]
    assert lams == [0.3, 0.6, 0.9, 1.3] and all(c["replicas"] == 50 for c in rows)
    # non-increasing up to CI overlap: a later lambda may exceed an earlier one only if their intervals overlap
    monotone = all(later["ci_low"] <= earlier["ci_high"] for i, earlier in enumerate(rows) for later in rows[i + 1:])
    first, last = rows[0], rows[-1]
    separated = first["fraction"] > last["fraction"] and first["ci_low"] > last["ci_high"]
    ok = monotone and separated and elapsed < 900
    fracs = ", ".join(f"{c['lambda']:g}: {c['fraction']:.2f} [{c['ci_low']:.2f}, {c['ci_high']:.2f}]" for c in rows)
    criterion(5, ok, f"bounded fractions {fracs}; monotone {monotone}, separated {separated} ({elapsed:.1f}s)")
    assert ok


def test_criterion_10_determinism(criterion, default_sweep, tmp_path):
    first, _, _ = default_sweep
    t0 = time.perf_counter()
    run_sweep(SweepConfig.load(DEFAULT_SWEEP), workers=8, out=str(tmp_path))
    elapsed = time.perf_counter() - t0
    same = all((first / name).read_bytes() == (tmp_path / name).read_bytes()
               for name in ("summary.json", "sweep.csv", "csp.csv"))
    ok = same and elapsed < 600
    criterion(10, ok, f"workers 1 vs 8 byte-identical summary/sweep/csp: {same} ({elapsed:.1f}s)")
    assert ok


# --- 6 --------------------------------------------------------------------

def test_criterion_6_covariance_bound(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    violations, control_failures, checks = 0, 0, 0
    for d, n in ((1, 256), (2, 64)):
        grid = Grid(d, n, 8.0)
        for spec in CATALOG:
            kernel = parse_kernel_spec(spec, d)
            phi = build_phi(kernel, 0.25, grid)
            # negative control: norm far above the c/2 recipe
            broken = build_phi(kernel, 0.25, grid, phi_scale=4.0 * covariance_row(kernel, grid).max() / phi.c)
            for _ in range(100):
                g = random_compact_field(rng, grid)
                violations += not covariance_lower_bound_check(g, phi, kernel, grid)["holds"]
                control_failures += not covariance_lower_bound_check(g, broken, kernel, grid)["holds"]
                checks += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and control_failures >= 1 and elapsed < 120
    criterion(6, ok, f"{checks} checks, {violations} violations; negative control failures {control_failures} "
                     f"({elapsed:.1f}s)")
    assert ok


# --- 7 --------------------------------------------------------------------

def test_criterion_7_reverse_jensen(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    gamma, lam, H, R = 0.5, 0.5, 2.0, 2.0
    results = {}
    for d in (1, 2):
        samples = [holder_sample(rng, gamma, H, d, period=2 * (R + 1)) for _ in range(200)]
        results[f"x d={d}"] = [max(reverse_jensen_x(s, R, None, 0.0, 1.0, gamma, lam, H, d, nodes)["ratio"]
                                   for s in samples) for nodes in (32, 128)]
    samples = [holder_sample(rng, gamma, H, 1, period=2.0, mode="anchor") for _ in range(200)]
    results["t"] = [max(reverse_jensen_t(s, 1.0, gamma, lam, H, nodes)["ratio"] for s in samples)
                    for nodes in (256, 1024)]
    stable = {k: bool(np.isfinite(v).all() and max(v) / min(v) < 2.0) for k, v in results.items()}
    extremal = extremal_profile_check(gamma, lam, H)
    elapsed = time.perf_counter() - t0
    ok = all(stable.values()) and extremal["holds"] and elapsed < 300
    detail = "; ".join(f"{k} max ratio {v[0]:.4g} -> {v[1]:.4g}" for k, v in results.items())
    criterion(7, ok, f"{detail}; extremal power gap {extremal['power_gap']:.1e} ({elapsed:.1f}s)")
    assert ok


# --- 8 --------------------------------------------------------------------

def test_criterion_8_cutoff(criterion):
    t0 = time.perf_counter()
    rep = cutoff_properties_check(0.5, 1.0, (10, 100, 1000), M=10.0)
    elapsed = time.perf_counter() - t0
    ok = rep["holds"] and elapsed < 60
    devs = ", ".join(f"{r['sup_dev']:.3g}" for r in rep["rows"])
    criterion(8, ok, f"checks {rep['checks']}; sup deviations {devs} ({elapsed:.1f}s)")
    assert ok


# --- 9 --------------------------------------------------------------------

def test_criterion_9_exponents(criterion):
    t0 = time.perf_counter()
    pts = np.linspace(0, 1, 12)[1:-1]
    worst, in_range, count = 0.0, True, 0
    for g in pts:
        for lam in pts:
            for d in range(1, 11):
                e = exponents(g, lam, d)
                worst = max(worst, e.identity_error)
                in_range &= 0 < e.l < 1 and e.L > 1
                count += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-14 and in_range and count == 1000 and elapsed < 1
    criterion(9, ok, f"{count} points, max |L(gl+1)-(g+1)| = {worst:.1e}, ranges ok {in_range} ({elapsed:.3f}s)")
    assert ok
