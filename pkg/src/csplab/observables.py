"""Field diagnostics: epsilon-support radius, shell integrals, weighted sups, Hölder estimates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .noise import Grid

__all__ = [
    "GeometryError",
    "UnusableTrajectoryError",
    "ShellGeometry",
    "Trajectory",
    "HolderEstimate",
    "support_radius",
    "make_shell",
    "shell_integral",
    "weight",
    "weighted_sup",
    "holder_seminorm",
    "csp_indicator",
    "write_trajectory_csv",
]


class GeometryError(ValueError):
    pass


class UnusableTrajectoryError(ValueError):
    pass


def support_radius(u: np.ndarray, grid: Grid, eps: float) -> Optional[float]:
    """Largest ``|x|`` over cells with ``u(x) > eps``; ``None`` if there are none."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    mask = u > eps
    if not mask.any():
        return None
    return float(grid.radius()[mask].max())


@dataclass(frozen=True, eq=False)
class ShellGeometry:
    """Cells with ``R - w/2 <= |x| < R + w/2``, each weighted ``dx^d / w``."""

    R: float
    width: float
    cells: tuple = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def make_shell(grid: Grid, R: float, width: Optional[float] = None) -> ShellGeometry:
    """Annulus around ``|x| = R``; default width ``max(3 dx, R / 50)``."""
    if not R > 0:
        raise GeometryError("shell radius must be positive")
    w = max(3.0 * grid.dx, R / 50.0) if width is None else float(width)
    if not w > 0:
        raise GeometryError("shell width must be positive")
    r = grid.radius()
    mask = (r >= R - w / 2) & (r < R + w / 2)
    cells = np.nonzero(mask)
    weights = np.full(cells[0].size, grid.cell_volume / w)
    weights.flags.writeable = False
    return ShellGeometry(float(R), w, cells, weights)


def shell_integral(u: np.ndarray, shell: ShellGeometry) -> float:
    """Annulus-average approximation of the surface integral of ``u`` over ``|x| = R``."""
    if shell.weights.size == 0:
        raise GeometryError(f"empty shell at R={shell.R}, w={shell.width}")
    return float(np.dot(u[shell.cells], shell.weights))


def weight(grid: Grid, a: float) -> np.ndarray:
    """``1 / cosh(a |x|)`` on the grid."""
    if not a > 0:
        raise ValueError("weight rate must be positive")
    return 1.0 / np.cosh(a * grid.radius())


def weighted_sup(u: np.ndarray, grid: Grid, a: float) -> float:
    return float(np.max(u * weight(grid, a)))


@dataclass
class Trajectory:
    """Recorded observables of one replica.

    ``support_radius`` maps each absolute threshold to one entry per
    recorded time (``None`` when nothing exceeds it).  ``snapshots`` holds
    full fields at ``snapshot_times`` when requested.
    """

    grid: Grid
    times: List[float] = field(default_factory=list)
    steps: List[int] = field(default_factory=list)
    support_radius: Dict[float, list] = field(default_factory=dict)
    shell_integrals: Dict[float, list] = field(default_factory=dict)
    weighted_sup: Dict[float, list] = field(default_factory=dict)
    mass: List[float] = field(default_factory=list)
    maximum: List[float] = field(default_factory=list)
    snapshot_times: List[float] = field(default_factory=list)
    snapshot_steps: List[int] = field(default_factory=list)
    snapshots: List[np.ndarray] = field(default_factory=list, repr=False)
    final_field: Optional[np.ndarray] = field(default=None, repr=False)
    clipped_mass: float = 0.0
    blowup: Optional[dict] = None
    metadata: dict = field(default_factory=dict)

    def record(self, u: np.ndarray, t: float, k: int, eps: Sequence[float], shells: Sequence[ShellGeometry],
               rates: Sequence[float]) -> None:
        self.times.append(float(t))
        self.steps.append(int(k))
        for e in eps:
            self.support_radius.setdefault(float(e), []).append(support_radius(u, self.grid, e))
        for s in shells:
            self.shell_integrals.setdefault(s.R, []).append(shell_integral(u, s))
        for a in rates:
            self.weighted_sup.setdefault(float(a), []).append(weighted_sup(u, self.grid, a))
        self.mass.append(float(u.sum() * self.grid.cell_volume))
        self.maximum.append(float(u.max()))

    def snapshot(self, u: np.ndarray, t: float, k: int) -> None:
        self.snapshot_times.append(float(t))
        self.snapshot_steps.append(int(k))
        self.snapshots.append(np.array(u, copy=True))

    def max_support(self, eps: float) -> Optional[float]:
        vals = [r for r in self._radii(eps) if r is not None]
        return max(vals) if vals else None

    def _radii(self, eps: float) -> list:
        for key, vals in self.support_radius.items():
            if math.isclose(key, eps, rel_tol=1e-9):
                return vals
        if self.snapshots and len(self.snapshots) == len(self.times):
            return [support_radius(u, self.grid, eps) for u in self.snapshots]
        raise UnusableTrajectoryError(f"support radius at eps={eps:g} was not recorded")


def csp_indicator(traj: Trajectory, eps: float, R_max: float) -> bool:
    """True iff the eps-support stays within ``R_max`` at every recorded time.

    A replica that blew up is never counted as bounded.
    """
    if traj.blowup is not None:
        return False
    return all(r is None or r <= R_max for r in traj._radii(eps))


@dataclass(frozen=True)
class HolderEstimate:
    seminorm: float
    sup_norm: float
    pairs: int

    @property
    def total(self) -> float:
        return self.seminorm + self.sup_norm

    def __float__(self) -> float:
        return self.total


def holder_seminorm(traj: Trajectory, gamma: float, a: float, budget: int = 100_000,
                    seed: int = 0) -> HolderEstimate:
    """Budgeted estimate of the weighted space-time ``C^gamma`` norm.

    Ratios ``|v(t,x) - v(s,y)| / (|t - s| + |x - y|)^gamma`` with
    ``v = u / cosh(a|x|)`` are taken over all nearest neighbours in space
    and time plus ``budget`` uniformly random pairs.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if len(traj.snapshots) < 2:
        raise UnusableTrajectoryError("Hölder estimate needs snapshots at two or more times")
    g = traj.grid
    v = np.stack(traj.snapshots) * weight(g, a)
    t = np.asarray(traj.snapshot_times)
    sup = float(np.abs(v).max())
    best = 0.0
    # nearest neighbours in time
    dt = np.abs(np.diff(t)).reshape((-1,) + (1,) * g.dim)
    best = max(best, float((np.abs(np.diff(v, axis=0)) / dt ** gamma).max()))
    # nearest neighbours in space (periodic wrap excluded)
    for ax in range(1, g.dim + 1):
        best = max(best, float((np.abs(np.diff(v, axis=ax)) / g.dx ** gamma).max()))
    rng = np.random.default_rng(seed)
    flat = v.reshape(len(t), -1)
    coords = np.stack([c.ravel() for c in g.coords()], axis=-1)
    i1, i2 = rng.integers(0, len(t), (2, budget))
    j1, j2 = rng.integers(0, g.size, (2, budget))
    dist = np.abs(t[i1] - t[i2]) + np.linalg.norm(coords[j1] - coords[j2], axis=-1)
    ok = dist > 0
    if ok.any():
        diff = np.abs(flat[i1, j1] - flat[i2, j2])[ok]
        best = max(best, float((diff / dist[ok] ** gamma).max()))
    return HolderEstimate(best, sup, int(budget))


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Columns: time, support radius per threshold, shell integrals, weighted sups, mass, max."""
    eps = sorted(traj.support_radius)
    radii = sorted(traj.shell_integrals)
    rates = sorted(traj.weighted_sup)
    header = (["time"] + [f"support_radius_eps{e:g}" for e in eps] + [f"shell_R{r:g}" for r in radii]
              + [f"weighted_sup_a{a:g}" for a in rates] + ["mass", "max"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [repr(t)]
            row += ["none" if traj.support_radius[e][k] is None else repr(traj.support_radius[e][k]) for e in eps]
            row += [repr(traj.shell_integrals[r][k]) for r in radii]
            row += [repr(traj.weighted_sup[a][k]) for a in rates]
            row += [repr(traj.mass[k]), repr(traj.maximum[k])]
            w.writerow(row)
