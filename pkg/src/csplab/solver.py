"""Explicit Euler-Maruyama stepping of ``du = L u dt + h(u) dF`` on a periodic grid.

``L u = a^{ij} D_ij u + b^i D_i u + c u`` uses centered differences (the
mixed term in 2-D uses the four-point cross stencil).  The noise term is
evaluated at the left endpoint (Ito) and every step is followed by the
positivity truncation ``u <- max(u, 0)``; the mass removed is accumulated
in ``SolverState.clipped_mass``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .noise import Grid, NoiseSampler, sample_increment

__all__ = [
    "Coefficients",
    "CoefficientReport",
    "CoefficientError",
    "DiffusionFn",
    "SolverState",
    "InitialData",
    "BlowUpError",
    "validate_coefficients",
    "make_cutoff",
    "cfl_max_dt",
    "apply_operator",
    "adjoint_operator",
    "step",
    "BLOWUP_LIMIT",
    "time_grid",
    "simulate",
    "weak_form_residual",
    "write_field",
    "read_field",
    "plateau",
    "mollifier",
]

BLOWUP_LIMIT = 1e12
CFL_SAFETY = 0.9


class CoefficientError(ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

    @property
    def witness(self):
        return None if self.report is None else self.report.witness


class BlowUpError(RuntimeError):
    def __init__(self, step_index: int, max_value: float, lam: Optional[float] = None):
        self.step_index = step_index
        self.max_value = max_value
        self.lam = lam
        super().__init__(f"blow-up at step {step_index}: max |u| = {max_value:.3e} (lambda={lam})")


# ---------------------------------------------------------------------------
# finite differences on the periodic grid
# ---------------------------------------------------------------------------

def _d1(u, axis, dx):
    return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2.0 * dx)


def _d2(u, axis, dx):
    return (np.roll(u, -1, axis) - 2.0 * u + np.roll(u, 1, axis)) / (dx * dx)


def _dmix(u, dx):
    up = np.roll(u, -1, 0)
    um = np.roll(u, 1, 0)
    return (np.roll(up, -1, 1) - np.roll(up, 1, 1) - np.roll(um, -1, 1) + np.roll(um, 1, 1)) / (4.0 * dx * dx)


def _second(u, i, j, dx):
    return _d2(u, i, dx) if i == j else _dmix(u, dx)


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Coefficients:
    """Operator data ``a^{ij}(t, x)``, ``b^i(t, x)``, ``c(t, x)`` and the bound ``K``.

    Each callable takes ``(t, coords)`` with ``coords`` the tuple returned by
    :meth:`Grid.coords` and returns an array broadcastable to ``(d, d) +
    shape``, ``(d,) + shape`` and ``shape`` respectively.  Set ``steady`` when
    nothing depends on ``t`` so evaluations can be cached.
    """

    dim: int
    a: Callable
    b: Callable
    c: Callable
    K: float = 1.0
    steady: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def constant(cls, a, b=None, c=0.0, K: float = 1.0) -> "Coefficients":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        d = a.shape[0]
        b = np.zeros(d) if b is None else np.asarray(b, dtype=float).reshape(d)
        c = float(c)
        return cls(d, lambda t, x: a, lambda t, x: b, lambda t, x: c, float(K))

    @classmethod
    def laplacian(cls, dim: int, K: float = 1.0) -> "Coefficients":
        return cls.constant(np.eye(dim), K=K)

    @classmethod
    def modulated(cls, dim: int, L: float, amplitude: float = 0.3, K: float = 2.0) -> "Coefficients":
        """``a = (1 + amplitude * prod_i sin(pi x_i / L)) I``: smooth, periodic on ``[-L, L)^d``."""
        eye = np.eye(dim).reshape((dim, dim) + (1,) * dim)

        def a(t, x):
            s = np.prod([np.sin(np.pi * xi / L) for xi in x], axis=0)
            return eye * (1.0 + amplitude * s)

        return cls(dim, a, lambda t, x: np.zeros(dim).reshape((dim,) + (1,) * dim),
                   lambda t, x: 0.0, float(K))

    def evaluate(self, t: float, grid: Grid):
        """Full arrays ``(A, B, C)`` of shapes ``(d, d)+shape``, ``(d,)+shape``, ``shape``."""
        key = (grid.dim, grid.n, grid.L)
        if self.steady and key in self._cache:
            return self._cache[key]
        x = grid.coords()
        d, shp = grid.dim, grid.shape
        A = np.broadcast_to(self._shape(self.a(t, x), (d, d), shp), (d, d) + shp)
        B = np.broadcast_to(self._shape(self.b(t, x), (d,), shp), (d,) + shp)
        C = np.broadcast_to(np.asarray(self.c(t, x), dtype=float), shp)
        out = (A, B, C)
        if self.steady:
            self._cache[key] = out
        return out

    @staticmethod
    def _shape(v, lead, shp):
        v = np.asarray(v, dtype=float)
        if v.shape == lead:
            return v.reshape(lead + (1,) * len(shp))
        return v


@dataclass(frozen=True)
class CoefficientReport:
    passed: bool
    min_ratio: float
    max_ratio: float
    witness: Optional[tuple]
    bounds: dict


def _directions(dim: int, count: int = 16) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0]])
    th = np.pi * np.arange(count) / count
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def validate_coefficients(coeffs: Coefficients, grid: Grid, times: Sequence[float] = (0.0,),
                          raise_on_failure: bool = True) -> CoefficientReport:
    """Check ellipticity ``K^-1 |xi|^2 <= a xi.xi <= K |xi|^2`` and the size bounds.

    The quadratic form is sampled at every grid point, every time in
    ``times`` and a fixed fan of unit directions (``e_1`` first).  ``|a|``,
    ``|b|``, ``|c|`` and the finite-difference derivatives of ``a`` (first,
    second) and ``b`` (first) must also stay below ``K``.

    Raises
    ------
    CoefficientError
        On any violation, carrying the report; ``err.witness`` is
        ``(t, x, xi)`` for ellipticity failures.
    """
    K = coeffs.K
    if K < 1:
        raise CoefficientError(f"K must be >= 1, got {K}")
    dirs = _directions(grid.dim)
    coords = grid.coords()
    lo, hi = math.inf, -math.inf
    worst = (0.0, None)
    bounds = {"a": 0.0, "b": 0.0, "c": 0.0, "Da": 0.0, "D2a": 0.0, "Db": 0.0}
    tol = 1e-12
    for t in times:
        A, B, C = coeffs.evaluate(t, grid)
        q = np.einsum("ki,ij...,kj->k...", dirs, A, dirs)
        # exact extrema of the form come from the eigenvalues of the symmetric part
        sym = np.moveaxis(0.5 * (A + np.swapaxes(A, 0, 1)), (0, 1), (-2, -1))
        eig = np.linalg.eigvalsh(np.broadcast_to(sym, grid.shape + sym.shape[-2:]))
        lo, hi = min(lo, float(eig.min())), max(hi, float(eig.max()))
        for bad in (q - K, 1.0 / K - q):
            peak = float(bad.max())
            # earliest direction within rounding of the worst one, so ties favour e_1
            k = int(np.argmax(bad.ravel() >= peak - tol))
            v = float(bad.ravel()[k])
            if v > tol and v > worst[0]:
                idx = np.unravel_index(k, q.shape)
                x = tuple(float(c[idx[1:]]) for c in coords)
                worst = (v, (float(t), x, tuple(float(s) for s in dirs[idx[0]])))
        dx = grid.dx
        bounds["a"] = max(bounds["a"], float(np.abs(A).max()))
        bounds["b"] = max(bounds["b"], float(np.abs(B).max()))
        bounds["c"] = max(bounds["c"], float(np.abs(C).max()))
        for ax in range(grid.dim):
            bounds["Da"] = max(bounds["Da"], float(np.abs(_d1(A, ax + 2, dx)).max()))
            bounds["D2a"] = max(bounds["D2a"], float(np.abs(_d2(A, ax + 2, dx)).max()))
            bounds["Db"] = max(bounds["Db"], float(np.abs(_d1(B, ax + 1, dx)).max()))
    bound_fail = {k: v for k, v in bounds.items() if v > K + tol}
    passed = worst[1] is None and not bound_fail
    report = CoefficientReport(passed, lo, hi, worst[1], bounds)
    if not passed and raise_on_failure:
        if worst[1] is not None:
            raise CoefficientError(f"ellipticity violated with K={K}: witness (t, x, xi) = {worst[1]}", report)
        raise CoefficientError(f"coefficient bounds exceed K={K}: {bound_fail}", report)
    return report


def cfl_max_dt(coeffs: Coefficients, grid: Grid) -> float:
    """Stability bound ``dx^2 / (2 d K + dx K d + dx^2 K)`` of the explicit scheme."""
    dx, d, K = grid.dx, grid.dim, coeffs.K
    return dx * dx / (2 * d * K + dx * K * d + dx * dx * K)


# ---------------------------------------------------------------------------
# noise coefficient
# ---------------------------------------------------------------------------

def _smooth_step(t):
    # C-infinity transition from 0 (t <= 0) to 1 (t >= 1)
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        g = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return f / (f + g)


def plateau(z):
    """Symmetric smooth cutoff: 1 on ``|z| <= 1``, 0 on ``|z| >= 2``."""
    return _smooth_step(2.0 - np.abs(z))


def mollifier(z):
    """Unit-mass smooth density supported in ``[0, 1]``."""
    z = np.asarray(z, dtype=float)
    inside = (z > 0) & (z < 1)
    zz = np.where(inside, z, 0.5)
    return np.where(inside, np.exp(-1.0 / (zz * (1.0 - zz))), 0.0) / _MOLLIFIER_MASS


_MOLLIFIER_MASS = integrate.quad(lambda z: math.exp(-1.0 / (z * (1.0 - z))), 0.0, 1.0,
                                 epsabs=0.0, epsrel=1e-13)[0]


@lru_cache(maxsize=8)
def _mollifier_rule(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    z = 0.5 * (x + 1.0)
    w = 0.5 * w * mollifier(z)
    return z, w / w.sum()


@dataclass(frozen=True)
class DiffusionFn:
    """Noise coefficient ``h(u)``.

    For ``lam < 1``: ``h(u) = min(u^lam, K (1 + u))``; for ``lam >= 1``:
    ``h(u) = u^lam``.  Always ``h(u) = 0`` for ``u <= 0``.  With
    ``cutoff_n`` set, the Lipschitz approximation

        h_n(u) = psi(u / n) * int_0^1 h(u - z / n) zeta(z) dz

    is used instead (``zeta`` a unit-mass mollifier on ``[0, 1]``, ``psi`` a
    plateau cutoff), evaluated with a ``nodes``-point Gauss-Legendre rule.
    """

    lam: float
    K: float = 1.0
    cutoff_n: Optional[int] = None
    nodes: int = 256

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.cutoff_n is not None and self.cutoff_n < 1:
            raise ValueError("cutoff n must be >= 1")

    def base(self, u):
        u = np.asarray(u, dtype=float)
        pos = np.maximum(u, 0.0)
        out = pos ** self.lam
        if self.lam < 1:
            out = np.minimum(out, self.K * (1.0 + pos))
        return np.where(u > 0, out, 0.0)

    def __call__(self, u):
        if self.cutoff_n is None:
            return self.base(u)
        n = self.cutoff_n
        u = np.asarray(u, dtype=float)
        z, w = _mollifier_rule(self.nodes)
        smoothed = self.base(u[..., None] - z / n) @ w
        return smoothed * plateau(u / n)


def make_cutoff(h: DiffusionFn, n: int, nodes: Optional[int] = None) -> DiffusionFn:
    """The Lipschitz approximation ``h_n`` of ``h``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return replace(h, cutoff_n=int(n), nodes=nodes or h.nodes)


# ---------------------------------------------------------------------------
# state, initial data, stepping
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SolverState:
    grid: Grid
    field: np.ndarray
    time: float = 0.0
    step_index: int = 0
    clipped_mass: float = 0.0


@dataclass(frozen=True)
class InitialData:
    """Compactly supported nonnegative initial profile.

    ``bump``: ``height * cos^2(pi |x| / (2 R0))`` on ``|x| < R0``.
    ``table``: radial ``(radius, value)`` table, linear, zero from the last
    radius on (which becomes ``R0``).
    """

    profile: str = "bump"
    R0: float = 1.0
    height: float = 1.0
    radii: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.profile not in ("bump", "table", "zero"):
            raise ValueError(f"unknown initial profile {self.profile!r}")
        if self.profile == "table":
            if len(self.radii) < 2 or len(self.radii) != len(self.values):
                raise ValueError("table initial data needs >= 2 (radius, value) rows")
            if min(self.values) < 0:
                raise ValueError("initial data must be nonnegative")
            object.__setattr__(self, "R0", float(self.radii[-1]))
        if self.R0 <= 0 or self.height < 0:
            raise ValueError("need R0 > 0 and height >= 0")

    @classmethod
    def from_table_file(cls, path) -> "InitialData":
        data = np.loadtxt(path, ndmin=2)
        return cls("table", radii=tuple(data[:, 0]), values=tuple(data[:, 1]))

    def on(self, grid: Grid) -> np.ndarray:
        r = grid.radius()
        if self.profile == "zero":
            return np.zeros(grid.shape)
        if self.profile == "bump":
            return np.where(r < self.R0, self.height * np.cos(np.pi * r / (2.0 * self.R0)) ** 2, 0.0)
        vals = np.interp(r, self.radii, self.values, right=0.0)
        return np.where(r < self.R0, vals, 0.0)


def apply_operator(u: np.ndarray, A, B, C, dx: float) -> np.ndarray:
    """``a^{ij} D_ij u + b^i D_i u + c u`` with centered differences."""
    d = u.ndim
    out = C * u
    for i in range(d):
        out = out + A[i, i] * _d2(u, i, dx) + B[i] * _d1(u, i, dx)
    if d == 2:
        out = out + (A[0, 1] + A[1, 0]) * _dmix(u, dx)
    return out


def adjoint_operator(phi: np.ndarray, A, B, C, dx: float) -> np.ndarray:
    """``L* phi = (a_ij,ij - b_i,i + c) phi + (2 a_ij,j - b_i) phi_i + a_ij phi_ij``."""
    d = phi.ndim
    A = np.broadcast_to(A, (d, d) + phi.shape)
    B = np.broadcast_to(B, (d,) + phi.shape)
    zeroth = np.array(C, dtype=float)
    for i in range(d):
        zeroth = zeroth - _d1(B[i], i, dx)
        for j in range(d):
            zeroth = zeroth + _second(A[i, j], i, j, dx)
    out = zeroth * phi
    for i in range(d):
        drift = -B[i]
        for j in range(d):
            drift = drift + 2.0 * _d1(A[i, j], j, dx)
            out = out + A[i, j] * _second(phi, i, j, dx)
        out = out + drift * _d1(phi, i, dx)
    return out


def step(state: SolverState, coeffs: Coefficients, h: DiffusionFn, sampler: Optional[NoiseSampler],
         dt: float, replica: int = 0, *, check_cfl: bool = True) -> SolverState:
    """Advance one explicit Euler-Maruyama step with positivity truncation.

    ``sampler=None`` disables the noise.

    Raises
    ------
    BlowUpError
        If the new field contains NaN/Inf or exceeds :data:`BLOWUP_LIMIT`.
    """
    grid = state.grid
    if check_cfl and dt > CFL_SAFETY * cfl_max_dt(coeffs, grid) * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds {CFL_SAFETY} * CFL bound {cfl_max_dt(coeffs, grid):g}")
    u = state.field
    A, B, C = coeffs.evaluate(state.time, grid)
    new = u + dt * apply_operator(u, A, B, C, grid.dx)
    if sampler is not None:
        new = new + h(u) * sample_increment(sampler, dt, state.step_index, replica)
    neg = np.minimum(new, 0.0)
    clipped = -float(neg.sum()) * grid.cell_volume
    new = np.maximum(new, 0.0)
    peak = float(np.max(new)) if new.size else 0.0
    if not np.isfinite(peak) or not np.all(np.isfinite(new)) or peak > BLOWUP_LIMIT:
        raise BlowUpError(state.step_index, peak, h.lam)
    return SolverState(grid, new, state.time + dt, state.step_index + 1, state.clipped_mass + clipped)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def time_grid(coeffs: Coefficients, grid: Grid, T: float, dt: Optional[float] = None,
              safety: float = CFL_SAFETY) -> tuple:
    """``(nsteps, dt)`` with ``nsteps * dt = T`` and ``dt <= safety * cfl_max_dt``."""
    limit = safety * cfl_max_dt(coeffs, grid)
    if dt is None:
        dt = limit
    elif dt > CFL_SAFETY * cfl_max_dt(coeffs, grid) * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds {CFL_SAFETY} * CFL bound {cfl_max_dt(coeffs, grid):g}")
    nsteps = max(1, math.ceil(T / dt - 1e-9))
    return nsteps, T / nsteps


def simulate(config, replica: int = 0, *, sampler: Optional[NoiseSampler] = None,
             on_blowup: str = "raise"):
    """Run one replica of ``config`` (a :class:`csplab.config.RunConfig`) up to ``config.T``.

    Observables are recorded at step 0, every ``config.stride`` steps and at
    the final step; full fields every ``config.snapshot_stride`` steps when
    that is positive.  Support thresholds are ``eps_rel * max(u0)``.

    ``on_blowup="record"`` stores the diagnostic in ``Trajectory.blowup``
    and returns the partial trajectory instead of raising.
    """
    from .noise import build_sampler
    from .observables import Trajectory, make_shell

    grid = config.build_grid()
    coeffs = config.build_coefficients()
    h = config.build_diffusion()
    u = config.build_initial().on(grid)
    if config.noise and sampler is None:
        sampler = build_sampler(config.build_kernel(), grid, base_seed=config.seed)
    active = sampler if config.noise else None
    nsteps, dt = time_grid(coeffs, grid, config.T, config.dt, config.safety)

    peak0 = float(u.max())
    eps = [e * peak0 for e in config.eps_rel] if peak0 > 0 else list(config.eps_rel)
    shells = [make_shell(grid, R) for R in config.shell_radii]
    traj = Trajectory(grid, metadata={"config": config.digest(), "replica": int(replica), "seed": int(config.seed),
                                      "dt": dt, "nsteps": nsteps, "eps": eps,
                                      "defect": None if active is None else active.defect})
    state = SolverState(grid, u)

    def observe(s):
        if s.step_index % config.stride == 0 or s.step_index == nsteps:
            traj.record(s.field, s.time, s.step_index, eps, shells, config.weight_rates)
        if config.snapshot_stride and (s.step_index % config.snapshot_stride == 0 or s.step_index == nsteps):
            traj.snapshot(s.field, s.time, s.step_index)

    observe(state)
    try:
        for _ in range(nsteps):
            state = step(state, coeffs, h, active, dt, replica, check_cfl=False)
            observe(state)
    except BlowUpError as exc:
        if on_blowup != "record":
            raise
        traj.blowup = {"step": exc.step_index, "max": exc.max_value, "lambda": exc.lam}
    traj.final_field = state.field
    traj.clipped_mass = state.clipped_mass
    return traj


def _test_function(phi, grid: Grid) -> np.ndarray:
    if callable(phi):
        return np.asarray(phi(grid.coords()), dtype=float)
    return np.asarray(phi, dtype=float)


def weak_form_residual(traj, phi, coeffs: Coefficients, h: DiffusionFn,
                       sampler: Optional[NoiseSampler], replica: Optional[int] = None,
                       return_terms: bool = False):
    """Relative residual of the tested integral identity along a stored run.

    Evaluates ``(u_N, phi) - (u_0, phi) - sum_k dt (u_k, L* phi)
    - sum_k (h(u_k) phi, dF_k)`` with ``L*`` from its explicit formula
    (finite differences), regenerating ``dF_k`` from ``sampler``.  Returns the
    absolute residual divided by the largest term (or, with
    ``return_terms``, a dict of all terms and the signed residual).  ``phi``
    is an array on the grid or a callable of the coordinate tuple.

    Raises
    ------
    UnusableTrajectoryError
        Unless snapshots were stored at every step.
    """
    from .observables import UnusableTrajectoryError

    steps = traj.snapshot_steps
    if len(steps) < 2 or steps != list(range(steps[0], steps[0] + len(steps))):
        raise UnusableTrajectoryError("weak-form residual needs a snapshot at every step")
    if replica is None:
        replica = traj.metadata.get("replica", 0)
    grid = traj.grid
    vol = grid.cell_volume
    ph = _test_function(phi, grid)
    u = traj.snapshots
    t = traj.snapshot_times
    first = float(np.sum(u[0] * ph) * vol)
    last = float(np.sum(u[-1] * ph) * vol)
    drift = 0.0
    noise = 0.0
    for k in range(len(u) - 1):
        dt = t[k + 1] - t[k]
        A, B, C = coeffs.evaluate(t[k], grid)
        drift += dt * float(np.sum(u[k] * adjoint_operator(ph, A, B, C, grid.dx)) * vol)
        if sampler is not None:
            dF = sample_increment(sampler, dt, steps[k], replica)
            noise += float(np.sum(h(u[k]) * ph * dF) * vol)
    resid = last - first - drift - noise
    scale = max(abs(last), abs(first), abs(drift), abs(noise))
    rel = abs(resid) / scale if scale > 0 else 0.0
    if return_terms:
        return {"final": last, "initial": first, "drift": drift, "noise": noise, "residual": resid,
                "relative": rel}
    return rel


# ---------------------------------------------------------------------------
# binary field files
# ---------------------------------------------------------------------------

_MAGIC = b"CSPF"
_HEADER = struct.Struct("<4sIIIdd")


def write_field(path, u: np.ndarray, dx: float, time: float) -> None:
    """Little-endian file: magic, version, ndim, n, dx, time, then float64 values (C order)."""
    u = np.asarray(u, dtype="<f8")
    if u.ndim not in (1, 2) or len(set(u.shape)) != 1:
        raise ValueError("fields must be 1-D or square 2-D arrays")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, u.ndim, u.shape[0], float(dx), float(time)))
        fh.write(np.ascontiguousarray(u).tobytes())


def read_field(path) -> tuple:
    """Inverse of :func:`write_field`: ``(u, dx, time)``."""
    with open(path, "rb") as fh:
        magic, version, ndim, n, dx, time = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != 1:
            raise ValueError(f"{path}: not a field file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n ** ndim:
        raise ValueError(f"{path}: truncated field data")
    return data.reshape((n,) * ndim).astype(float), dx, time
