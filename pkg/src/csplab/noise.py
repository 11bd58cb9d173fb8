"""Colored-in-space, white-in-time Gaussian noise on a periodic grid.

The spatial covariance is embedded in a circulant matrix built from the
kernel evaluated at minimum-image lags.  Its eigenvalues (the discrete
spectrum) are clipped at zero, and an increment is

    dF = sqrt(dt) * C^{1/2} W,

with ``W`` i.i.d. standard normal per cell and ``C^{1/2}`` applied by FFT.
Every increment is keyed by ``(base_seed, replica, step_index)``, so the
result does not depend on evaluation order or on the number of workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .kernels import DEFECT_LIMIT, CorrelationKernel, EmbeddingDefectError, kernel_at

__all__ = [
    "Grid",
    "NoiseSampler",
    "CovarianceEstimate",
    "build_sampler",
    "covariance_row",
    "sample_increment",
    "empirical_covariance",
    "moment_check",
    "write_covariance_csv",
]

STREAM_SOLVER = 0
STREAM_VALIDATION = 1


@dataclass(frozen=True)
class Grid:
    """Periodic box ``[-L, L)^d`` with ``n`` points per axis.

    Cell centres sit at ``-L + j * dx``; the origin is index ``n // 2``.
    """

    dim: int
    n: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError("half extent L must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.dim

    @property
    def origin(self) -> tuple:
        return (self.n // 2,) * self.dim

    def axis(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.n)

    def coords(self) -> tuple:
        """Coordinate arrays, one per axis, each of shape ``self.shape``."""
        return tuple(np.meshgrid(*([self.axis()] * self.dim), indexing="ij"))

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x * x for x in self.coords()))

    def lags(self) -> np.ndarray:
        """Minimum-image displacements in FFT order, shape ``self.shape + (dim,)``."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n) * self.dx
        return np.stack(np.meshgrid(*([k] * self.dim), indexing="ij"), axis=-1)


def _riesz_cell_average(alpha: float, dim: int, dx: float) -> float:
    h = dx / 2.0
    if dim == 1:
        return h ** (-alpha) / (1.0 - alpha)
    # eight triangles 0 <= y <= x <= h of the square, in polar coordinates
    val, _ = integrate.quad(lambda th: (h / math.cos(th)) ** (2.0 - alpha) / (2.0 - alpha), 0.0, math.pi / 4)
    return 8.0 * val / dx ** 2


def covariance_row(kernel: CorrelationKernel, grid: Grid) -> np.ndarray:
    """First row of the circulant covariance (wrapped kernel), in FFT order."""
    if kernel.dim != grid.dim:
        kernel = kernel.with_dim(grid.dim)
    if kernel.kind == "white":
        row = np.zeros(grid.shape)
        row[(0,) * grid.dim] = 1.0 / grid.cell_volume
        return row
    if kernel.kind == "constant":
        return np.ones(grid.shape)
    lags = grid.lags()
    if kernel.kind == "riesz":
        r = np.linalg.norm(lags, axis=-1)
        r[(0,) * grid.dim] = 1.0
        row = r ** (-kernel.alpha)
        row[(0,) * grid.dim] = _riesz_cell_average(kernel.alpha, grid.dim, grid.dx)
        return row
    return kernel_at(kernel, lags)


@dataclass(frozen=True, eq=False)
class NoiseSampler:
    """Precomputed spectral amplitudes for one kernel on one grid.

    ``spectrum`` holds the clipped circulant eigenvalues and ``amplitudes``
    their square roots.  ``row`` is the unclipped wrapped kernel and
    ``defect`` the fraction of spectral mass removed by clipping.
    """

    grid: Grid
    kernel: CorrelationKernel
    row: np.ndarray = field(repr=False)
    spectrum: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)
    defect: float
    base_seed: int

    @cached_property
    def clipped_row(self) -> np.ndarray:
        """Covariance row actually realized by the sampler."""
        return np.fft.ifftn(self.spectrum).real

    @cached_property
    def _half_amplitudes(self) -> np.ndarray:
        return self.amplitudes[..., : self.grid.n // 2 + 1]

    def apply_sqrt(self, white: np.ndarray) -> np.ndarray:
        """Apply ``C^{1/2}`` to fields of i.i.d. normals (leading batch axes allowed)."""
        axes = tuple(range(-self.grid.dim, 0))
        spec = np.fft.rfftn(white, axes=axes) * self._half_amplitudes
        return np.fft.irfftn(spec, s=self.grid.shape, axes=axes)


def build_sampler(kernel: CorrelationKernel, grid: Grid, base_seed: int = 0) -> NoiseSampler:
    """Circulant-embedding sampler for ``kernel`` on ``grid``.

    Raises
    ------
    EmbeddingDefectError
        If clipping removes 1% or more of the spectral mass.
    """
    if kernel.dim != grid.dim:
        kernel = kernel.with_dim(grid.dim)
    row = covariance_row(kernel, grid)
    if kernel.kind == "white":
        raw = np.full(grid.shape, 1.0 / grid.cell_volume)
    elif kernel.kind == "constant":
        raw = np.zeros(grid.shape)
        raw[(0,) * grid.dim] = float(grid.size)
    else:
        raw = np.fft.fftn(row).real
    neg = raw < 0
    total = float(np.abs(raw).sum())
    defect = max(0.0, float(-raw[neg].sum() / total)) if total > 0 else 0.0
    if defect >= DEFECT_LIMIT:
        raise EmbeddingDefectError(defect)
    spectrum = np.where(neg, 0.0, raw)
    amplitudes = np.sqrt(spectrum)
    for arr in (row, spectrum, amplitudes):
        arr.flags.writeable = False
    return NoiseSampler(grid, kernel, row, spectrum, amplitudes, defect, int(base_seed))


def _rng(sampler: NoiseSampler, stream: int, replica: int, step_index: int) -> np.random.Generator:
    return np.random.default_rng([sampler.base_seed, stream, replica, step_index])


def sample_increment(sampler: NoiseSampler, dt: float, step_index: int, replica: int = 0) -> np.ndarray:
    """One noise increment over a step of length ``dt``.

    Centered Gaussian with ``Cov(dF(x), dF(y)) = dt * C(x - y)``.  A pure
    function of ``(sampler, dt, step_index, replica)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    white = _rng(sampler, STREAM_SOLVER, replica, step_index).standard_normal(sampler.grid.shape)
    return math.sqrt(dt) * sampler.apply_sqrt(white)


def _validation_draws(sampler: NoiseSampler, nsamples: int, batch: int = 512):
    done = 0
    b = 0
    while done < nsamples:
        m = min(batch, nsamples - done)
        white = _rng(sampler, STREAM_VALIDATION, b, 0).standard_normal((m,) + sampler.grid.shape)
        yield sampler.apply_sqrt(white)
        done += m
        b += 1


@dataclass(frozen=True)
class CovarianceEstimate:
    lag: tuple
    target: float
    estimate: float
    stderr: float

    @property
    def zscore(self) -> float:
        return (self.estimate - self.target) / self.stderr if self.stderr > 0 else (
            0.0 if self.estimate == self.target else math.inf)


def _as_lag(lag, dim) -> tuple:
    lag = (lag,) if np.isscalar(lag) else tuple(lag)
    if len(lag) != dim:
        raise ValueError(f"lag {lag} does not match grid dimension {dim}")
    return tuple(int(v) for v in lag)


def empirical_covariance(sampler: NoiseSampler, nsamples: int, lags: Iterable,
                         anchor: Optional[Sequence[int]] = None) -> list:
    """Monte Carlo estimate of ``Cov(dF(anchor), dF(anchor + lag)) / dt``.

    ``lags`` are integer grid offsets (ints in 1-D, tuples in 2-D).  Targets
    are the wrapped kernel values.  Uses a validation stream separate from
    the solver's.
    """
    if nsamples < 100:
        raise ValueError("need at least 100 samples")
    g = sampler.grid
    anchor = tuple(anchor) if anchor is not None else g.origin
    lags = [_as_lag(lag, g.dim) for lag in lags]
    products = {lag: [] for lag in lags}
    for fields in _validation_draws(sampler, nsamples):
        a = fields[(slice(None),) + anchor]
        for lag in lags:
            idx = tuple((p + q) % g.n for p, q in zip(anchor, lag))
            products[lag].append(a * fields[(slice(None),) + idx])
    out = []
    for lag in lags:
        p = np.concatenate(products[lag])
        target = float(sampler.row[tuple(q % g.n for q in lag)])
        out.append(CovarianceEstimate(lag, target, float(p.mean()), float(p.std(ddof=1) / math.sqrt(p.size))))
    return out


def moment_check(sampler: NoiseSampler, nsamples: int = 10_000, cell=None) -> dict:
    """Skewness and excess kurtosis of one cell against 4-sigma normal bounds."""
    cell = tuple(cell) if cell is not None else sampler.grid.origin
    vals = np.concatenate([f[(slice(None),) + cell] for f in _validation_draws(sampler, nsamples)])
    skew = float(stats.skew(vals))
    kurt = float(stats.kurtosis(vals))
    skew_bound = 4.0 / math.sqrt(nsamples) * math.sqrt(6.0)
    kurt_bound = 4.0 / math.sqrt(nsamples) * math.sqrt(24.0)
    return {"skewness": skew, "excess_kurtosis": kurt, "skew_bound": skew_bound,
            "kurt_bound": kurt_bound, "passed": abs(skew) < skew_bound and abs(kurt) < kurt_bound}


def write_covariance_csv(path, rows: Iterable[CovarianceEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "target", "estimate", "stderr"])
        for r in rows:
            w.writerow([" ".join(map(str, r.lag)), repr(r.target), repr(r.estimate), repr(r.stderr)])
