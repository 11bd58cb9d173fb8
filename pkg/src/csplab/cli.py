"""Command line entry point ``csplab``.

Exit codes: 0 ok, 1 validation failure, 2 runtime failure, 3 lemma violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys


from .config import ConfigError, RunConfig, SweepConfig, load_yaml
from .kernels import (KernelError, bessel_f_integral, check_local_integrability, check_reinforced_dalang,
                      parse_kernel_spec)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_LEMMA = 0, 1, 2, 3


def _override(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    for attr, key in (("lam", "lam"), ("kernel", "kernel"), ("eta", "eta"), ("n", "n"), ("T", "T"),
                      ("seed", "seed")):
        val = getattr(args, key, None)
        if val is not None:
            changes[attr] = val
    cfg = cfg.with_(**changes) if changes else cfg
    cfg.validate_basic()
    return cfg


def cmd_check_dalang(args) -> int:
    kernel = parse_kernel_spec(args.kernel, args.dim)
    reports = {
        "reinforced_dalang": check_reinforced_dalang(kernel, args.eta, args.dim),
        "local_integrability": check_local_integrability(kernel, args.eta, args.dim),
        "bessel_pairing": bessel_f_integral(kernel, args.eta, args.dim),
    }
    out = {name: {"value": r.value, "converged": r.converged, "tail_exponent": r.tail_exponent,
                  "case": r.case} for name, r in reports.items()}
    out["kernel"] = str(kernel)
    out["eta"] = args.eta
    out["dim"] = args.dim
    print(json.dumps(out, indent=2, sort_keys=True, default=float))
    return EXIT_OK if reports["reinforced_dalang"].converged else EXIT_VALIDATION


def cmd_sample_noise(args) -> int:
    from .noise import Grid, build_sampler, empirical_covariance, moment_check, write_covariance_csv

    kernel = parse_kernel_spec(args.kernel, args.dim)
    grid = Grid(args.dim, args.n, args.L)
    sampler = build_sampler(kernel, grid, args.seed)
    lags = [int(v) for v in args.lags.split(",")] if args.dim == 1 else \
        [tuple(int(x) for x in lag.split(":")) for lag in args.lags.split(",")]
    rows = empirical_covariance(sampler, args.samples, lags)
    os.makedirs(args.out, exist_ok=True)
    write_covariance_csv(os.path.join(args.out, "covariance.csv"), rows)
    mom = moment_check(sampler, args.samples)
    print(f"kernel {kernel}  defect {sampler.defect:.3e}")
    for r in rows:
        print(f"lag {r.lag}: target {r.target:.6g}  estimate {r.estimate:.6g}  z {r.zscore:+.2f}")
    print(f"skewness {mom['skewness']:+.4f}  excess kurtosis {mom['excess_kurtosis']:+.4f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .harness import validate_run
    from .observables import write_trajectory_csv
    from .solver import simulate, write_field

    cfg = _override(RunConfig.load(args.config), args)
    for w in validate_run(cfg):
        logging.warning(w)
    traj = simulate(cfg, args.replica)
    os.makedirs(args.out, exist_ok=True)
    write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), traj)
    grid = traj.grid
    write_field(os.path.join(args.out, "final.field"), traj.final_field, grid.dx, traj.times[-1])
    for k, (t, u) in enumerate(zip(traj.snapshot_times, traj.snapshots)):
        write_field(os.path.join(args.out, f"snapshot_{k:05d}.field"), u, grid.dx, t)
    eps = traj.metadata["eps"][0]
    print(f"steps {traj.metadata['nsteps']}  dt {traj.metadata['dt']:.4g}  "
          f"max support (eps={eps:.1e}) {traj.max_support(eps)}  clipped mass {traj.clipped_mass:.4g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import format_report, run_sweep

    data = load_yaml(args.config)
    sweep = SweepConfig.from_dict(data, os.path.dirname(os.path.abspath(args.config)))
    if args.seed is not None:
        sweep = SweepConfig(sweep.base.with_(seed=args.seed), sweep.lambdas, sweep.kernels, sweep.replicas,
                            sweep.R_max, sweep.out, sweep.write_trajectories)
    if args.replicas is not None:
        sweep = SweepConfig(sweep.base, sweep.lambdas, sweep.kernels, args.replicas, sweep.R_max, sweep.out,
                            sweep.write_trajectories)
    summary = run_sweep(sweep, workers=args.workers, out=args.out or sweep.out)
    print(format_report(summary), end="")
    return EXIT_OK


def cmd_lemma_suite(args) -> int:
    from .harness import lemma_suite

    params = load_yaml(args.params) if args.params else {}
    status = lemma_suite(params, args.out)
    for name, ok in status.items():
        print(f"{name:<20} {'ok' if ok else 'FAIL'}")
    if not status["covariance_bound"]:
        return EXIT_LEMMA
    return EXIT_OK if all(status.values()) else EXIT_RUNTIME


def cmd_report(args) -> int:
    from .harness import format_report

    with open(os.path.join(args.out, "summary.json")) as fh:
        summary = json.load(fh)
    print(format_report(summary), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csplab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check-dalang", help="integrability checks for a kernel and eta")
    s.add_argument("--kernel", required=True, help="white | riesz:alpha=A | ou:beta=B | constant | bump:r=R,amp=A | table:PATH")
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--dim", type=int, default=1)
    s.set_defaults(func=cmd_check_dalang)

    s = sub.add_parser("sample-noise", help="empirical covariance of noise increments")
    s.add_argument("--kernel", required=True)
    s.add_argument("--dim", type=int, default=1)
    s.add_argument("--n", type=int, default=256)
    s.add_argument("--L", type=float, default=8.0)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--lags", default="0,1,2,4,8", help="comma list; in 2-D use i:j entries")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="noise_out")
    s.set_defaults(func=cmd_sample_noise)

    s = sub.add_parser("simulate", help="run one replica of a configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--replica", type=int, default=0)
    s.add_argument("--seed", type=int)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--kernel")
    s.add_argument("--eta", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--T", type=float)
    s.add_argument("--out", default="run_out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="Monte Carlo sweep over lambda and kernels")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--replicas", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("lemma-suite", help="run the lemma checks and write JSON reports")
    s.add_argument("--params")
    s.add_argument("--out", default="lemma_reports")
    s.set_defaults(func=cmd_lemma_suite)

    s = sub.add_parser("report", help="print the CSP table of a finished sweep")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KernelError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
