"""Numerical checks of the analytic lemmas used in the support argument.

* exponent bookkeeping ``l = (g lam + d)/(g + d)`` and ``L = (g + 1)/(g l + 1)``;
* reverse-Jensen inequalities in space (over a thin annulus) and in time;
* the covariance lower bound ``int (g * g~) f >= ||g * phi||^2`` with an
  explicitly constructed ``phi``;
* properties of the Lipschitz cutoff ``h_n`` and of the ``1/cosh`` weight.

Lemma constants without numeric values are probed by ensembles whose
maximum ratio must stay stable under refinement; the covariance bound has
no free constant and is checked exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .kernels import CorrelationKernel
from .noise import Grid, covariance_row
from .observables import GeometryError, weight
from .solver import DiffusionFn, make_cutoff

__all__ = [
    "PreconditionError",
    "ConstructionError",
    "ExponentSet",
    "exponents",
    "HolderSample",
    "holder_sample",
    "admissible_radius",
    "reverse_jensen_x",
    "reverse_jensen_t",
    "extremal_profile_check",
    "PhiConstruction",
    "build_phi",
    "covariance_lower_bound_check",
    "random_compact_field",
    "cutoff_properties_check",
    "weight_derivative_check",
]


class PreconditionError(ValueError):
    pass


class ConstructionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# exponents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentSet:
    gamma: float
    lam: float
    d: int
    l: float
    L: float

    @property
    def identity_error(self) -> float:
        """``|L (gamma l + 1) - (gamma + 1)|``."""
        return abs(self.L * (self.gamma * self.l + 1.0) - (self.gamma + 1.0))


def exponents(gamma: float, lam: float, d: int) -> ExponentSet:
    if not (0 < gamma < 1 and 0 < lam < 1):
        raise ValueError("gamma and lambda must lie in (0, 1)")
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    l = (gamma * lam + d) / (gamma + d)
    L = (gamma + 1.0) / (gamma * l + 1.0)
    if not (0 < l < 1 and L > 1):
        raise ArithmeticError(f"exponent range violated: l={l}, L={L}")
    return ExponentSet(float(gamma), float(lam), int(d), l, L)


# ---------------------------------------------------------------------------
# Hölder samples
# ---------------------------------------------------------------------------

def _pairwise_holder_1d(v: np.ndarray, dx: float, gamma: float) -> float:
    best = 0.0
    for lag in range(1, v.size):
        q = np.abs(v[lag:] - v[:-lag]).max() / (lag * dx) ** gamma
        best = max(best, float(q))
    return best


def _holder_2d(v: np.ndarray, dx: float, gamma: float, window: int = 12, pairs: int = 200_000,
               rng: Optional[np.random.Generator] = None) -> float:
    best = 0.0
    n = v.shape[0]
    for i in range(0, window + 1):
        for j in range(-window, window + 1):
            if i == 0 and j <= 0:
                continue
            a = v[i:, max(j, 0): n + min(j, 0)]
            b = v[: n - i, max(-j, 0): n - max(j, 0)]
            best = max(best, float(np.abs(a - b).max() / (math.hypot(i, j) * dx) ** gamma))
    rng = rng or np.random.default_rng(0)
    p = rng.integers(0, n, (4, pairs))
    dist = np.hypot(p[0] - p[2], p[1] - p[3]) * dx
    ok = dist > 0
    diff = np.abs(v[p[0], p[1]] - v[p[2], p[3]])
    return max(best, float((diff[ok] / dist[ok] ** gamma).max()))


@dataclass(frozen=True, eq=False)
class HolderSample:
    """Random trigonometric sum ``scale * (sum_k c_k cos(2 pi k.x / P + theta_k))``.

    ``mode`` fixes how nonnegativity is obtained: ``"shift"`` subtracts the
    reference-grid minimum and clips at zero, ``"anchor"`` takes
    ``|f(x) - f(0)|`` so the sample vanishes at the origin.  Both operations
    preserve the Hölder constant.
    """

    dim: int
    period: float
    gamma: float
    H: float
    freqs: np.ndarray = field(repr=False)
    coef: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)
    scale: float = 1.0
    offset: float = 0.0
    mode: str = "shift"
    measured_H: float = float("nan")

    def raw(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = x[..., None] if self.dim == 1 else x
        arg = 2.0 * np.pi * (pts @ self.freqs.T) / self.period + self.phase
        return np.cos(arg) @ self.coef

    def __call__(self, x) -> np.ndarray:
        v = self.scale * self.raw(x)
        if self.mode == "anchor":
            origin = np.zeros(()) if self.dim == 1 else np.zeros(self.dim)
            return np.abs(v - self.scale * self.raw(origin))
        return np.maximum(v - self.offset, 0.0)


def holder_sample(rng: np.random.Generator, gamma: float, H: float, dim: int = 1, period: float = 1.0,
                  modes: Optional[int] = None, mode: str = "shift", ref_points: Optional[int] = None) -> HolderSample:
    """Draw a sample with Hölder constant ``H`` (measured on a reference grid) and sup at most ``H``.

    Coefficients are ``N(0, |k|^{-(2 gamma + d)})`` over integer wave vectors
    ``1 <= |k|_inf <= modes``.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    modes = modes or (64 if dim == 1 else 8)
    if dim == 1:
        freqs = np.arange(1, modes + 1, dtype=float)[:, None]
    else:
        k = np.arange(-modes, modes + 1)
        kk = np.stack(np.meshgrid(k, k, indexing="ij"), -1).reshape(-1, 2)
        kk = kk[(kk[:, 0] > 0) | ((kk[:, 0] == 0) & (kk[:, 1] > 0))]
        freqs = kk.astype(float)
    norm = np.linalg.norm(freqs, axis=1)
    coef = rng.standard_normal(norm.size) * norm ** (-(gamma + dim / 2.0))
    phase = rng.uniform(0.0, 2.0 * np.pi, norm.size)
    s = HolderSample(dim, float(period), float(gamma), float(H), freqs, coef, phase, 1.0, 0.0, mode)
    m = ref_points or (2048 if dim == 1 else 96)
    dx = period / m
    if dim == 1:
        x = dx * np.arange(m)
        v = s.raw(x)
        hq = _pairwise_holder_1d(np.concatenate([v, v[:1]]), dx, gamma)
    else:
        ax = dx * np.arange(m)
        x = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1)
        v = s.raw(x)
        hq = _holder_2d(v, dx, gamma)
    scale = H / hq
    offset = float(v.min()) * scale
    sup = float(v.max()) * scale - (offset if mode == "shift" else float(v.min()) * scale)
    if sup > H:
        scale *= H / sup
        offset = float(v.min()) * scale
    measured = hq * scale
    return HolderSample(dim, float(period), float(gamma), float(H), freqs, coef, phase, scale, offset, mode, measured)


# ---------------------------------------------------------------------------
# reverse Jensen
# ---------------------------------------------------------------------------

def admissible_radius(R: float, a: float, b: float, gamma: float, H: float, d: int) -> float:
    """Supremum of admissible ``r`` for the spatial inequality."""
    area = d * math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    inner = (2.0 ** (-(gamma + 1) / gamma) * H ** (-d / gamma) * R ** (d - 1) * area) ** (1.0 / (gamma + d - 1))
    return min(R / b, inner / (b - a))


def _report(lemma, params, lhs, rhs, resolution, holds=None):
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return {"lemma": lemma, "params": params, "lhs": float(lhs), "rhs": float(rhs), "ratio": float(ratio),
            "holds": holds, "resolution": resolution}


def _annulus_integrals(g, R, r, a, b, d, lam, nodes):
    lo, hi = R + a * r, R + b * r
    if d == 1:
        # both components of {lo < |x| < hi}, midpoint rule
        h = (hi - lo) / nodes
        x = lo + h * (np.arange(nodes) + 0.5)
        v = np.concatenate([g(x), g(-x)])
        return float(v.sum() * h), float((v ** lam).sum() * h)
    # the annulus is thin: few radial nodes, many angular ones
    nr, nt = max(2, nodes // 4), 4 * nodes
    hr = (hi - lo) / nr
    ht = 2.0 * np.pi / nt
    rho = lo + hr * (np.arange(nr) + 0.5)
    th = ht * (np.arange(nt) + 0.5)
    P, T = np.meshgrid(rho, th, indexing="ij")
    pts = np.stack([P * np.cos(T), P * np.sin(T)], -1)
    v = g(pts)
    w = P * hr * ht
    return float((v * w).sum()), float((v ** lam * w).sum())


def reverse_jensen_x(g, R: float, r: Optional[float], a: float, b: float, gamma: float, lam: float, H: float,
                     d: int = 1, nodes: int = 256) -> dict:
    """Ratio ``(int g)^l / [R^{d(d-1)/(g+d)} (r(b-a))^{-d(g+d-1)/(g+d)} int g^lam]`` over the annulus.

    ``r=None`` picks half the admissible bound.  In 1-D the annulus has two
    components and both are integrated.  ``g`` is any callable of points
    (a :class:`HolderSample` or the zero function).

    Raises
    ------
    PreconditionError
        If ``R <= 1``, ``H <= 1`` or ``r`` is outside the admissible range.
    """
    if R <= 1 or H <= 1 or not 0 <= a < b:
        raise PreconditionError("need R > 1, H > 1 and 0 <= a < b")
    bound = admissible_radius(R, a, b, gamma, H, d)
    if r is None:
        r = 0.5 * bound
    if not 0 < r < bound:
        raise PreconditionError(f"r={r} outside admissible range (0, {bound})")
    mass, mass_lam = _annulus_integrals(g, R, r, a, b, d, lam, nodes)
    l = (gamma * lam + d) / (gamma + d)
    lhs = mass ** l
    rhs = R ** (d * (d - 1) / (gamma + d)) * (r * (b - a)) ** (-d * (gamma + d - 1) / (gamma + d)) * mass_lam
    params = {"R": R, "r": r, "a": a, "b": b, "gamma": gamma, "lambda": lam, "H": H, "d": d, "r_bound": bound}
    return _report("reverse_jensen_x", params, lhs, rhs, nodes)


def reverse_jensen_t(g, T: float, gamma: float, lam: float, H: float, nodes: int = 1024,
                     tol: float = 1e-12) -> dict:
    """Ratio ``(int_0^T g)^{(g lam+1)/(g+1)} / [H^{1/g} int_0^T g^lam]`` by the midpoint rule."""
    if abs(float(g(np.zeros(1))[0])) > tol:
        raise PreconditionError("the time profile must vanish at t = 0")
    h = T / nodes
    t = h * (np.arange(nodes) + 0.5)
    v = np.maximum(g(t), 0.0)
    lhs = float(v.sum() * h) ** ((gamma * lam + 1) / (gamma + 1))
    rhs = H ** (1.0 / gamma) * float((v ** lam).sum() * h)
    return _report("reverse_jensen_t", {"T": T, "gamma": gamma, "lambda": lam, "H": H}, lhs, rhs, nodes)


def extremal_profile_check(gamma: float, lam: float, H: float, T_list: Sequence[float] = (0.1, 1.0, 10.0)) -> dict:
    """The profile ``H t^gamma``: closed-form ratio, quadrature cross-check, T-independence.

    The ``T`` powers on the two sides are ``(gamma+1)(gamma lam+1)/(gamma+1)``
    and ``gamma lam + 1``; they agree, so the ratio cannot depend on ``T``.
    """
    p = (gamma * lam + 1) / (gamma + 1)
    power_gap = abs((gamma + 1) * p - (gamma * lam + 1))
    closed = []
    quad = []
    for T in T_list:
        lhs = (H * T ** (gamma + 1) / (gamma + 1)) ** p
        rhs = H ** (1 / gamma) * H ** lam * T ** (gamma * lam + 1) / (gamma * lam + 1)
        closed.append(lhs / rhs)
        i1 = integrate.quad(lambda t: H * t ** gamma, 0, T, epsabs=0, epsrel=1e-13)[0]
        i2 = integrate.quad(lambda t: (H * t ** gamma) ** lam, 0, T, epsabs=0, epsrel=1e-13)[0]
        quad.append(i1 ** p / (H ** (1 / gamma) * i2))
    spread = (max(closed) - min(closed)) / max(closed)
    quad_err = max(abs(q - c) / c for q, c in zip(quad, closed))
    return {"lemma": "reverse_jensen_t_extremal", "params": {"gamma": gamma, "lambda": lam, "H": H,
                                                             "T": list(T_list)},
            "ratio": closed[0], "closed_form": closed, "quadrature": quad, "power_gap": power_gap,
            "T_spread": spread, "quad_error": quad_err,
            "holds": bool(power_gap < 1e-14 and spread < 1e-12 and quad_err < 1e-8)}


# ---------------------------------------------------------------------------
# covariance lower bound
# ---------------------------------------------------------------------------

def triangle_mollifier(grid: Grid, eps: float) -> np.ndarray:
    """``eps^-d prod_i 4^-1 (2 - |x_i|/eps)_+`` in FFT order, renormalized to unit discrete mass."""
    lags = grid.lags()
    v = np.prod(np.clip(2.0 - np.abs(lags) / eps, 0.0, None) / 4.0, axis=-1) / eps ** grid.dim
    total = v.sum() * grid.cell_volume
    if total <= 0:
        raise ConstructionError("mollifier has no mass on the grid")
    return v / total


@dataclass(frozen=True, eq=False)
class PhiConstruction:
    """Output of :func:`build_phi`; ``phi`` is in FFT order (centred at lag 0)."""

    phi: np.ndarray = field(repr=False)
    f_eps: np.ndarray = field(repr=False)
    c: float
    r: float
    norm2: float
    eps: float
    f_eps0: float


def _bump(radius: np.ndarray, support: float) -> np.ndarray:
    z = radius / support
    inside = z < 1
    zz = np.where(inside, z, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - zz * zz)), 0.0)


def build_phi(kernel: CorrelationKernel, eps: float, grid: Grid, r: Optional[float] = None,
              phi_scale: float = 1.0) -> PhiConstruction:
    """Construct ``phi >= 0`` with ``sup (phi * phi~) = ||phi||^2 = phi_scale * c / 2``.

    ``f_eps = psi_eps * psi_eps * f`` is formed by FFT on the periodic grid.
    ``r`` defaults to the largest radius on which ``f_eps >= f_eps(0) / 2``
    (capped at ``L / 4``), and ``c = min_{|x| <= r} f_eps``.  ``phi`` is a
    smooth bump supported in ``|x| < r / 2``, so ``phi * phi~`` lives where
    ``f_eps >= c``.  ``phi_scale > 1`` deliberately breaks the recipe.

    Raises
    ------
    ConstructionError
        If ``f_eps(0)`` is not positive or ``phi`` would have no grid support.
    """
    if kernel.dim != grid.dim:
        kernel = kernel.with_dim(grid.dim)
    vol = grid.cell_volume
    psi = triangle_mollifier(grid, eps)
    row = covariance_row(kernel, grid)
    f_eps = np.fft.ifftn(np.fft.fftn(psi) ** 2 * np.fft.fftn(row)).real * vol * vol
    f0 = float(f_eps[(0,) * grid.dim])
    if not f0 > 0:
        raise ConstructionError(f"f_eps(0) = {f0} is not positive; kernel too singular for eps={eps}")
    rad = np.linalg.norm(grid.lags(), axis=-1)
    cap = grid.L / 4.0
    if r is None:
        below = rad[f_eps < 0.5 * f0]
        r = min(cap, float(below.min()) - 0.5 * grid.dx) if below.size else cap
    c = float(f_eps[rad <= r].min())
    if not c > 0:
        raise ConstructionError("f_eps is not positive on the chosen ball")
    shape = _bump(rad, r / 2.0)
    if not shape.any():
        raise ConstructionError(f"phi support r/2={r / 2} is below the grid spacing {grid.dx}")
    norm2 = 0.5 * c * phi_scale
    phi = shape * math.sqrt(norm2 / float((shape ** 2).sum() * vol))
    return PhiConstruction(phi, f_eps, c, float(r), norm2, float(eps), f0)


def _extent(mask: np.ndarray) -> int:
    ext = 0
    for ax in range(mask.ndim):
        other = tuple(i for i in range(mask.ndim) if i != ax)
        idx = np.nonzero(mask.any(axis=other) if other else mask)[0]
        if idx.size:
            # smallest cyclic arc containing all occupied indices
            n = mask.shape[ax]
            gaps = np.diff(np.concatenate([idx, idx[:1] + n]))
            ext = max(ext, n - int(gaps.max()) + 1)
    return ext


def covariance_lower_bound_check(g: np.ndarray, phi, kernel: CorrelationKernel, grid: Grid) -> dict:
    """Compare ``sum (g * g~) f dx^d`` with ``sum |g * phi|^2 dx^d``.

    The kernel enters through its minimum-image row (white noise pairs as
    ``(g * g~)(0)``).  ``holds`` uses a ``1e-10`` relative tolerance.

    Raises
    ------
    GeometryError
        If the supports are wide enough for the periodic convolutions to wrap.
    """
    phi_arr = phi.phi if isinstance(phi, PhiConstruction) else np.asarray(phi, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape != grid.shape or phi_arr.shape != grid.shape:
        raise ValueError("g and phi must live on the grid")
    if g.min() < 0:
        raise ValueError("g must be nonnegative")
    eg = _extent(g != 0)
    ep = _extent(phi_arr != 0)
    n = grid.n
    if eg > n // 2 or eg + ep - 1 > n:
        raise GeometryError(f"support extents g={eg}, phi={ep} cells wrap on n={n}")
    if kernel.dim != grid.dim:
        kernel = kernel.with_dim(grid.dim)
    vol = grid.cell_volume
    G = np.fft.fftn(g)
    corr = np.fft.ifftn(np.abs(G) ** 2).real * vol
    row = covariance_row(kernel, grid)
    lhs = float((corr * row).sum() * vol)
    conv = np.fft.ifftn(G * np.fft.fftn(phi_arr)).real * vol
    rhs = float((conv ** 2).sum() * vol)
    holds = bool(lhs >= rhs - 1e-10 * abs(lhs))
    return {"lemma": "covariance_lower_bound", "params": {"kernel": str(kernel)}, "lhs": lhs, "rhs": rhs,
            "ratio": rhs / lhs if lhs > 0 else (0.0 if rhs == 0 else math.inf), "holds": holds,
            "resolution": n}


def random_compact_field(rng: np.random.Generator, grid: Grid, max_extent: Optional[int] = None) -> np.ndarray:
    """Nonnegative field supported on a random box of at most ``max_extent`` cells per axis."""
    max_extent = max_extent or grid.n // 4
    g = np.zeros(grid.shape)
    ext = rng.integers(1, max_extent + 1, grid.dim)
    start = rng.integers(0, grid.n - ext + 1)
    box = tuple(slice(s, s + e) for s, e in zip(start, ext))
    vals = rng.uniform(0.0, 1.0, tuple(ext))
    kind = rng.integers(0, 3)
    if kind == 1:
        vals *= rng.uniform(size=vals.shape) < 0.3
    elif kind == 2:
        vals = np.ones_like(vals)
    g[box] = vals
    return g


# ---------------------------------------------------------------------------
# cutoff and weight
# ---------------------------------------------------------------------------

def _dense_points(n: int, upper: float, count: int = 4000) -> np.ndarray:
    near = np.linspace(0.0, 4.0 / n, count)
    far = np.geomspace(4.0 / n, upper, count)
    return np.unique(np.concatenate([near, far]))


def cutoff_properties_check(lam: float, K: float = 1.0, n_list: Sequence[int] = (10, 100, 1000),
                            M: float = 10.0, nodes: int = 256) -> dict:
    """Measured properties of ``h_n`` for each ``n``.

    Reports ``h_n(0)``, the finite-difference Lipschitz constant on
    ``[0, 2n]``, ``sup_{[0, M]} |h_n - h|`` and ``sup h_n(u)/(1+u)``; then
    whether the deviations strictly decrease, whether ``Lip_n / n^{1-lam}``
    stays within a factor 4, and whether the linear bound holds with ``K``.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    h = DiffusionFn(lam, K, nodes=nodes)
    rows = []
    for n in n_list:
        hn = make_cutoff(h, n, nodes)
        u = _dense_points(n, 2.0 * n)
        v = hn(u)
        lip = float(np.max(np.abs(np.diff(v)) / np.diff(u)))
        um = np.unique(np.concatenate([np.linspace(0, M, 20001), _dense_points(n, M)]))
        dev = float(np.max(np.abs(hn(um) - h(um))))
        lin = float(np.max(v / (1.0 + u)))
        rows.append({"n": int(n), "h_n(0)": float(hn(np.zeros(1))[0]), "lipschitz": lip, "sup_dev": dev,
                     "linear_const": lin, "lip_over_growth": lip / n ** (1.0 - lam)})
    devs = [r["sup_dev"] for r in rows]
    growth = [r["lip_over_growth"] for r in rows]
    checks = {
        "zero_at_origin": all(r["h_n(0)"] == 0.0 for r in rows),
        "deviation_decreasing": all(b < a for a, b in zip(devs, devs[1:])),
        "lipschitz_order": max(growth) / min(growth) <= 4.0,
        "linear_bound": max(r["linear_const"] for r in rows) <= K * (1 + 1e-12),
    }
    return {"lemma": "cutoff", "params": {"lambda": lam, "K": K, "n_list": list(map(int, n_list)), "M": M},
            "rows": rows, "checks": checks, "holds": all(checks.values()), "resolution": nodes}


def weight_derivative_check(grid: Grid, a: float) -> dict:
    """``|D Psi_a| <= a Psi_a + 10 a dx^2`` at interior points (centered differences)."""
    psi = weight(grid, a)
    inner = (slice(1, -1),) * grid.dim
    grad2 = np.zeros(tuple(grid.n - 2 for _ in range(grid.dim)))
    for ax in range(grid.dim):
        d = (np.roll(psi, -1, ax) - np.roll(psi, 1, ax)) / (2.0 * grid.dx)
        grad2 = grad2 + d[inner] ** 2
    excess = np.sqrt(grad2) - a * psi[inner]
    tol = 10.0 * a * grid.dx ** 2
    worst = float(excess.max())
    return {"lemma": "weight_derivative", "params": {"a": a, "dim": grid.dim, "n": grid.n, "L": grid.L},
            "lhs": worst, "rhs": tol, "holds": bool(worst <= tol), "resolution": grid.n}
