import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csplab.config import RunConfig
from csplab.noise import Grid
from csplab.observables import (
    GeometryError,
    Trajectory,
    UnusableTrajectoryError,
    csp_indicator,
    holder_seminorm,
    make_shell,
    shell_integral,
    support_radius,
    weight,
    weighted_sup,
    write_trajectory_csv,
)
from csplab.solver import simulate


# --- support radius -------------------------------------------------------

def test_support_radius_zero_field():
    g = Grid(1, 64, 8.0)
    assert support_radius(np.zeros(64), g, 1e-8) is None


@pytest.mark.parametrize("dim", [1, 2])
def test_support_radius_indicator(dim):
    g = Grid(dim, 64, 8.0)
    u = (g.radius() <= 3.0).astype(float)
    assert support_radius(u, g, 0.5) == 3.0


def test_support_radius_gaussian():
    g = Grid(1, 256, 8.0)
    u = np.exp(-g.radius() ** 2 / 2)
    assert abs(support_radius(u, g, math.exp(-8)) - 4.0) <= g.dx


def test_support_radius_rejects_bad_eps():
    with pytest.raises(ValueError):
        support_radius(np.ones(8), Grid(1, 8, 1.0), 0.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), e1=st.floats(1e-12, 1.0), e2=st.floats(1e-12, 1.0))
def test_monotone_thresholds(seed, e1, e2):
    g = Grid(1, 64, 4.0)
    u = np.random.default_rng(seed).exponential(size=64) * np.exp(-g.radius())
    lo, hi = sorted((e1, e2))
    r_lo, r_hi = support_radius(u, g, lo), support_radius(u, g, hi)
    if r_hi is not None:
        assert r_lo is not None and r_lo >= r_hi


# --- shells ---------------------------------------------------------------

def test_shell_constant_2d():
    g = Grid(2, 256, 8.0)
    R = 4.0
    shell = make_shell(g, R)
    got = shell_integral(np.full(g.shape, 2.5), shell)
    tol = (shell.width / R) ** 2 + g.dx / R
    assert got == pytest.approx(2.5 * 2 * math.pi * R, rel=tol)


@pytest.mark.parametrize("R", [1.0, 2.5, 5.0])
def test_shell_constant_1d_two_points(R):
    g = Grid(1, 256, 8.0)
    shell = make_shell(g, R, width=4 * g.dx)
    assert shell_integral(np.full(256, 3.0), shell) == pytest.approx(6.0, rel=g.dx / shell.width)


def test_shell_zero_field():
    g = Grid(2, 32, 4.0)
    assert shell_integral(np.zeros(g.shape), make_shell(g, 1.0)) == 0.0


def test_empty_shell_errors():
    g = Grid(2, 32, 4.0)
    with pytest.raises(GeometryError):
        shell_integral(np.ones(g.shape), make_shell(g, 1.03, width=1e-6))
    with pytest.raises(GeometryError):
        make_shell(g, -1.0)


def test_shell_partition_identity():
    g = Grid(2, 128, 8.0)
    u = np.random.default_rng(1).uniform(size=g.shape)
    R0, w, m = 2.0, 0.25, 12
    total = sum(shell_integral(u, make_shell(g, R0 + (k + 0.5) * w, w)) * w for k in range(m))
    r = g.radius()
    direct = float(u[(r >= R0) & (r < R0 + m * w)].sum() * g.cell_volume)
    assert total == pytest.approx(direct, rel=1e-10)


# --- weighted sup ---------------------------------------------------------

@pytest.mark.parametrize("a", [0.1, 1.0, 3.0])
def test_weighted_sup_constant(a):
    g = Grid(2, 32, 4.0)
    assert weighted_sup(np.ones(g.shape), g, a) == 1.0


@pytest.mark.parametrize("a", [0.1, 0.7, 2.0])
def test_weighted_sup_cancellation(a):
    g = Grid(1, 64, 4.0)
    assert weighted_sup(np.cosh(a * g.radius()), g, a) == pytest.approx(1.0, rel=1e-14)


def test_weighted_sup_offset_indicator():
    g = Grid(1, 64, 8.0)
    u = (np.abs(g.axis() - 5.0) < g.dx).astype(float)
    assert weighted_sup(u, g, 1.0) == pytest.approx(1 / math.cosh(5.0), rel=1e-12)
    assert weighted_sup(u, g, 1.0) == pytest.approx(0.0134752, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(0.01, 5.0))
def test_weight_bound_transfer(seed, a):
    g = Grid(1, 64, 4.0)
    u = np.random.default_rng(seed).uniform(size=64)
    assert weighted_sup(u, g, a) <= u.max()
    u[32] = 2.0  # max at the origin
    assert weighted_sup(u, g, a) == 2.0


def test_weight_rejects_bad_rate():
    with pytest.raises(ValueError):
        weight(Grid(1, 8, 1.0), 0.0)


# --- Hölder estimate ------------------------------------------------------

def _traj(g, times, fields):
    tr = Trajectory(g)
    for k, (t, u) in enumerate(zip(times, fields)):
        tr.snapshot(u, t, k)
    return tr


def test_holder_constant_trajectory():
    g = Grid(1, 64, 4.0)
    tr = _traj(g, [0.0, 0.5, 1.0], [np.full(64, 2.0)] * 3)
    est = holder_seminorm(tr, 0.5, 1e-12)
    assert est.seminorm < 1e-10
    assert est.total == pytest.approx(2.0)


def test_holder_linear_in_time_witness():
    g = Grid(1, 64, 4.0)
    tr = _traj(g, [0.0, 1.0], [np.zeros(64), np.ones(64)])
    assert holder_seminorm(tr, 0.5, 1.0).seminorm >= 1.0


def test_holder_needs_two_snapshots():
    g = Grid(1, 8, 1.0)
    with pytest.raises(UnusableTrajectoryError):
        holder_seminorm(_traj(g, [0.0], [np.zeros(8)]), 0.5, 1.0)
    with pytest.raises(ValueError):
        holder_seminorm(_traj(g, [0.0, 1.0], [np.zeros(8)] * 2), 1.5, 1.0)


def test_holder_budget_stability():
    tr = simulate(RunConfig(T=0.1, lam=0.5, n=128, snapshot_stride=5))
    a = holder_seminorm(tr, 0.2, 1.0, budget=100_000, seed=1).total
    b = holder_seminorm(tr, 0.2, 1.0, budget=200_000, seed=2).total
    assert math.isfinite(a) and abs(a - b) <= 0.1 * a


# --- CSP indicator --------------------------------------------------------

def test_csp_zero_trajectory():
    tr = simulate(RunConfig(T=0.05, profile="zero"))
    assert csp_indicator(tr, 1e-8, 0.5)


def test_csp_threshold_crossing():
    tr = Trajectory(Grid(1, 8, 4.0), times=[0.0, 0.1, 0.2], support_radius={1e-8: [1.0, 1.5, 2.2]})
    assert not csp_indicator(tr, 1e-8, 2.0)
    assert csp_indicator(tr, 1e-8, 2.2)


def test_csp_blowup_counts_unbounded():
    tr = Trajectory(Grid(1, 8, 4.0), times=[0.0], support_radius={1e-8: [1.0]}, blowup={"step": 3})
    assert not csp_indicator(tr, 1e-8, 4.0)


def test_csp_unrecorded_threshold():
    tr = Trajectory(Grid(1, 8, 4.0), times=[0.0], support_radius={1e-8: [1.0]})
    with pytest.raises(UnusableTrajectoryError):
        csp_indicator(tr, 1e-3, 4.0)


def test_csp_half_box_most_replicas():
    cfg = RunConfig(T=0.25, lam=0.5, n=128)
    eps = 1e-8
    hits = [csp_indicator(simulate(cfg, r), eps, cfg.L / 2) for r in range(5)]
    assert sum(hits) >= 3


# --- export ---------------------------------------------------------------

def test_trajectory_csv(tmp_path):
    cfg = RunConfig(T=0.05, shell_radii=(2.0,), weight_rates=(0.5, 1.0), stride=5)
    tr = simulate(cfg)
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, tr)
    rows = list(csv.reader(open(path)))
    assert rows[0][0] == "time" and "shell_R2" in rows[0] and "weighted_sup_a0.5" in rows[0]
    assert len(rows) == 1 + len(tr.times)
    assert all(len(r) == len(rows[0]) for r in rows)
    assert float(rows[-1][0]) == pytest.approx(cfg.T)
