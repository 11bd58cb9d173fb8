"""Run and sweep configurations, loaded from YAML."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import yaml

from .kernels import CorrelationKernel, parse_kernel_spec
from .noise import Grid
from .solver import Coefficients, DiffusionFn, InitialData

__all__ = ["ConfigError", "RunConfig", "SweepConfig", "load_yaml"]


class ConfigError(ValueError):
    """Invalid configuration; ``check`` names the failing validation."""

    def __init__(self, message: str, check: str = "config"):
        super().__init__(f"[{check}] {message}")
        self.check = check


def load_yaml(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


_SECTIONS = {"grid", "kernel", "coefficients", "diffusion", "initial", "time", "recording", "noise", "seed", "sweep"}


@dataclass(frozen=True)
class RunConfig:
    """One simulation: grid, noise, operator, nonlinearity, initial data and recording."""

    dim: int = 1
    n: int = 256
    L: float = 16.0
    kernel: str = "white"
    eta: float = 0.4
    coefficients: str = "laplacian"
    coeff_K: float = 1.0
    coeff_amplitude: float = 0.3
    lam: float = 0.5
    K: float = 1.0
    cutoff_n: Optional[int] = None
    profile: str = "bump"
    R0: float = 1.0
    height: float = 1.0
    initial_table: Optional[str] = None
    T: float = 0.5
    dt: Optional[float] = None
    safety: float = 0.9
    stride: int = 10
    eps_rel: tuple = (1e-6, 1e-8, 1e-10)
    shell_radii: tuple = ()
    weight_rates: tuple = (1.0,)
    snapshot_stride: int = 0
    noise: bool = True
    seed: int = 0
    base_dir: Optional[str] = field(default=None, compare=False)

    # -- construction ------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[str] = None) -> "RunConfig":
        unknown = set(data) - _SECTIONS
        if unknown:
            raise ConfigError(f"unknown sections {sorted(unknown)}")
        g = data.get("grid", {})
        k = data.get("kernel", {})
        c = data.get("coefficients", {})
        h = data.get("diffusion", {})
        i = data.get("initial", {})
        t = data.get("time", {})
        r = data.get("recording", {})
        nz = data.get("noise", {})
        kw = dict(
            dim=g.get("dim", 1), n=g.get("n", 256), L=g.get("half_extent", g.get("L", 16.0)),
            kernel=str(k.get("spec", "white")), eta=k.get("eta", 0.4),
            coefficients=c.get("preset", "laplacian"), coeff_K=c.get("K", 1.0),
            coeff_amplitude=c.get("amplitude", 0.3),
            lam=h.get("lambda", 0.5), K=h.get("K", 1.0), cutoff_n=h.get("cutoff_n"),
            profile=i.get("profile", "bump"), R0=i.get("R0", 1.0), height=i.get("height", 1.0),
            initial_table=i.get("path"),
            T=t.get("T", 0.5), dt=t.get("dt"), safety=t.get("safety", 0.9),
            stride=r.get("stride", 10), eps_rel=tuple(r.get("eps_rel", (1e-6, 1e-8, 1e-10))),
            shell_radii=tuple(r.get("shell_radii", ())), weight_rates=tuple(r.get("weight_rates", (1.0,))),
            snapshot_stride=r.get("snapshot_stride", 0),
            noise=bool(nz.get("enabled", True)) if isinstance(nz, dict) else bool(nz),
            seed=int(data.get("seed", 0)),
        )
        try:
            cfg = cls(**kw, base_dir=base_dir)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate_basic()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(load_yaml(path), os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        return {
            "grid": {"dim": self.dim, "n": self.n, "half_extent": self.L},
            "kernel": {"spec": self.kernel, "eta": self.eta},
            "coefficients": {"preset": self.coefficients, "K": self.coeff_K, "amplitude": self.coeff_amplitude},
            "diffusion": {"lambda": self.lam, "K": self.K, "cutoff_n": self.cutoff_n},
            "initial": {"profile": self.profile, "R0": self.R0, "height": self.height, "path": self.initial_table},
            "time": {"T": self.T, "dt": self.dt, "safety": self.safety},
            "recording": {"stride": self.stride, "eps_rel": list(self.eps_rel), "shell_radii": list(self.shell_radii),
                          "weight_rates": list(self.weight_rates), "snapshot_stride": self.snapshot_stride},
            "noise": {"enabled": self.noise},
            "seed": self.seed,
        }

    def digest(self) -> str:
        """Short content hash of the configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def validate_basic(self) -> None:
        if self.T <= 0:
            raise ConfigError("T must be positive", "time")
        if self.stride < 1 or self.snapshot_stride < 0:
            raise ConfigError("stride must be >= 1 and snapshot_stride >= 0", "recording")
        if not self.eps_rel or min(self.eps_rel) <= 0:
            raise ConfigError("eps_rel must be a nonempty list of positive numbers", "recording")
        if not 0 < self.safety <= 0.9:
            raise ConfigError("safety must lie in (0, 0.9]", "time")
        try:
            self.build_grid()
            self.build_diffusion()
            self.build_initial()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- builders ----------------------------------------------------------
    def build_grid(self) -> Grid:
        return Grid(int(self.dim), int(self.n), float(self.L))

    def build_kernel(self) -> CorrelationKernel:
        return parse_kernel_spec(self.kernel, int(self.dim), base_dir=self.base_dir)

    def build_coefficients(self) -> Coefficients:
        if self.coefficients == "laplacian":
            return Coefficients.laplacian(self.dim, K=self.coeff_K)
        if self.coefficients == "modulated":
            return Coefficients.modulated(self.dim, self.L, self.coeff_amplitude, K=self.coeff_K)
        raise ConfigError(f"unknown coefficient preset {self.coefficients!r}", "coefficients")

    def build_diffusion(self) -> DiffusionFn:
        return DiffusionFn(float(self.lam), float(self.K), self.cutoff_n)

    def build_initial(self) -> InitialData:
        if self.profile == "table":
            if not self.initial_table:
                raise ConfigError("table initial data needs 'path'", "initial")
            path = self.initial_table
            if self.base_dir and not os.path.isabs(path):
                path = os.path.join(self.base_dir, path)
            return InitialData.from_table_file(path)
        return InitialData(self.profile, float(self.R0), float(self.height))


@dataclass(frozen=True)
class SweepConfig:
    """Grid of (lambda, kernel) cells, each run for ``replicas`` replicas."""

    base: RunConfig
    lambdas: tuple
    kernels: tuple
    replicas: int = 50
    R_max: float = 8.0
    out: str = "sweep_out"
    write_trajectories: bool = True

    def __post_init__(self):
        if not self.lambdas:
            raise ConfigError("lambda list is empty", "sweep")
        if not self.kernels:
            raise ConfigError("kernel list is empty", "sweep")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1", "sweep")
        if any(not lam > 0 for lam in self.lambdas):
            raise ConfigError("every lambda must be positive", "sweep")
        if not 0 < self.R_max < self.base.L:
            raise ConfigError(f"R_max={self.R_max} must lie in (0, L={self.base.L})", "sweep")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[str] = None) -> "SweepConfig":
        sw = dict(data.get("sweep") or {})
        base = RunConfig.from_dict({k: v for k, v in data.items() if k != "sweep"}, base_dir)
        return cls(
            base=base,
            lambdas=tuple(float(x) for x in sw.get("lambdas", (base.lam,))),
            kernels=tuple(str(x) for x in sw.get("kernels", (base.kernel,))),
            replicas=int(sw.get("replicas", 50)),
            R_max=float(sw.get("R_max", base.L / 2)),
            out=str(sw.get("out", "sweep_out")),
            write_trajectories=bool(sw.get("write_trajectories", True)),
        )

    @classmethod
    def load(cls, path) -> "SweepConfig":
        return cls.from_dict(load_yaml(path), os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        d = self.base.to_dict()
        d["sweep"] = {"lambdas": list(self.lambdas), "kernels": list(self.kernels), "replicas": self.replicas,
                      "R_max": self.R_max, "write_trajectories": self.write_trajectories}
        return d
