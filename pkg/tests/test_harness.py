import json
import math
import os

import numpy as np
import pytest
import yaml

from csplab.cli import main
from csplab.config import ConfigError, RunConfig, SweepConfig
from csplab.harness import estimate_csp_probability, format_report, lemma_suite, run_sweep, validate_run, wilson_interval

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _wilson(k, n, z=1.959963984540054):
    # independent closed form of the Wilson score interval
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return centre - half, centre + half


# --- configuration --------------------------------------------------------

def test_run_config_roundtrip():
    cfg = RunConfig(dim=2, n=32, L=4.0, kernel="riesz:alpha=0.5", lam=0.7, shell_radii=(1.0,))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg.with_(seed=1).digest() != cfg.digest()


@pytest.mark.parametrize("name", ["default_sweep.yaml", "run_example.yaml"])
def test_shipped_configs_load(name):
    data = yaml.safe_load(open(os.path.join(CONFIGS, name)))
    cfg = RunConfig.from_dict({k: v for k, v in data.items() if k != "sweep"})
    assert validate_run(cfg) == []


@pytest.mark.parametrize("bad,check", [
    ({"time": {"T": -1}}, "time"),
    ({"recording": {"stride": 0}}, "recording"),
    ({"bogus": 1}, "config"),
    ({"time": {"safety": 0.95}}, "time"),
])
def test_run_config_rejects(bad, check):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(bad)
    assert info.value.check == check


def test_sweep_rejects_empty_lambda_list():
    with pytest.raises(ConfigError, match="lambda list is empty"):
        SweepConfig.from_dict({"sweep": {"lambdas": []}})


@pytest.mark.parametrize("sweep", [{"replicas": 0}, {"R_max": 20.0}, {"lambdas": [-0.5]}, {"kernels": []}])
def test_sweep_rejects(sweep):
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"sweep": sweep})


# --- validation before compute --------------------------------------------

@pytest.mark.parametrize("changes,check", [
    ({"eta": 0.6}, "dalang"),
    ({"kernel": "riesz:alpha=1.5"}, "kernel"),
    ({"dt": 1.0}, "cfl"),
    ({"coefficients": "modulated", "coeff_amplitude": 0.9, "coeff_K": 1.0}, "ellipticity"),
])
def test_validate_run_names_failing_check(changes, check):
    with pytest.raises(ConfigError) as info:
        validate_run(RunConfig(n=64).with_(**changes))
    assert info.value.check == check


def test_validate_run_wrap_warning():
    assert validate_run(RunConfig(L=2.0, n=64))


# --- statistics -----------------------------------------------------------

@pytest.mark.parametrize("k,n", [(30, 30), (15, 30), (0, 30), (7, 50), (49, 50)])
def test_wilson_matches_closed_form(k, n):
    lo, hi = wilson_interval(k, n)
    elo, ehi = _wilson(k, n)
    assert lo == pytest.approx(elo, abs=1e-12) and hi == pytest.approx(ehi, abs=1e-12)
    assert lo <= k / n <= hi


def test_wilson_examples():
    assert wilson_interval(30, 30)[0] > 0.88
    lo, hi = wilson_interval(15, 30)
    assert lo == pytest.approx(0.33, abs=0.01) and hi == pytest.approx(0.67, abs=0.01)


def _records(lam, flags):
    return [{"kernel": "white", "lambda": lam, "bounded": {"1e-08": f}} for f in flags]


def test_estimate_csp_probability():
    rows = estimate_csp_probability(_records(0.5, [True] * 30) + _records(1.3, [False] * 30)
                                    + _records(0.9, [True, False]))
    by = {r["lambda"]: r for r in rows}
    assert by[0.5]["fraction"] == 1.0 and by[0.5]["ci_low"] > 0.88 and by[0.5]["regime"] == "sublinear"
    assert by[1.3]["fraction"] == 0.0 and by[1.3]["regime"] == "csp-failure"
    assert by[0.5]["reliable"] and not by[0.9]["reliable"]
    assert "unreliable" in format_report({"cells": rows, "blowups": 0, "replicas_total": 62})


# --- sweeps ---------------------------------------------------------------

def _small_sweep(**sweep):
    data = {"grid": {"n": 64, "half_extent": 8.0}, "time": {"T": 0.05}, "recording": {"stride": 1},
            "seed": 5, "sweep": {"lambdas": [0.5], "kernels": ["white"], "replicas": 4, "R_max": 4.0, **sweep}}
    return SweepConfig.from_dict(data)


def test_sweep_plumbing(tmp_path):
    summary = run_sweep(_small_sweep(), out=str(tmp_path))
    cell = tmp_path / "white__lambda0.5"
    assert sorted(p.name for p in cell.iterdir()) == [f"replica_{i:04d}.csv" for i in range(4)]
    assert {"sweep.csv", "csp.csv", "summary.json"} <= {p.name for p in tmp_path.iterdir()}
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 5
    for row in summary["cells"]:
        assert 0 <= row["fraction"] <= 1 and row["ci_low"] <= row["fraction"] <= row["ci_high"]
        assert not row["reliable"]
    assert json.loads((tmp_path / "summary.json").read_text())["replicas_total"] == 4


def test_sweep_deterministic_across_workers(tmp_path):
    sweep = _small_sweep(lambdas=[0.5, 1.3], kernels=["white", "ou:beta=1"], replicas=2)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    run_sweep(sweep, workers=1, out=str(a))
    run_sweep(sweep, workers=1, out=str(b))
    run_sweep(sweep, workers=3, out=str(c))
    for name in ("summary.json", "sweep.csv", "csp.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()


def test_sweep_validation_before_compute(tmp_path):
    # the constant kernel passes at any eta; white noise in 1-D fails for eta >= 1/2
    sweep = _small_sweep(kernels=["constant", "white"])
    sweep = SweepConfig(sweep.base.with_(eta=0.6), sweep.lambdas, sweep.kernels, 2, 4.0)
    with pytest.raises(ConfigError):
        run_sweep(sweep, out=str(tmp_path / "out"))
    assert not (tmp_path / "out").exists()


def test_sweep_records_blowups(tmp_path):
    data = {"grid": {"n": 64, "half_extent": 8.0}, "time": {"T": 0.2}, "initial": {"height": 1e11},
            "sweep": {"lambdas": [2.0], "replicas": 2, "R_max": 4.0, "write_trajectories": False}}
    summary = run_sweep(SweepConfig.from_dict(data), out=str(tmp_path))
    assert summary["blowups"] == 2 and all(c["fraction"] == 0.0 for c in summary["cells"])


# --- lemma suite ----------------------------------------------------------

_QUICK = {
    "exponents": {"points": 4},
    "reverse_jensen_x": {"samples": 5, "dims": [1]},
    "reverse_jensen_t": {"samples": 5},
    "covariance_bound": {"kernels": ["constant", "ou:beta=1"], "dims": [1], "samples": 10},
}


def test_lemma_suite_quick(tmp_path):
    status = lemma_suite(_QUICK, str(tmp_path))
    assert all(status.values())
    files = {p.name for p in tmp_path.iterdir()}
    assert {"exponents.json", "reverse_jensen_x.json", "reverse_jensen_t.json", "covariance_bound.json",
            "cutoff.json"} <= files
    rep = json.loads((tmp_path / "covariance_bound.json").read_text())
    assert rep["violations"] == 0


# --- command line ---------------------------------------------------------

def test_cli_check_dalang(capsys):
    assert main(["check-dalang", "--kernel", "white", "--eta", "0.4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["reinforced_dalang"]["converged"]
    assert main(["check-dalang", "--kernel", "white", "--eta", "0.6"]) == 1


def test_cli_rejects_inadmissible_riesz(capsys):
    assert main(["check-dalang", "--kernel", "riesz:alpha=1.5", "--eta", "0.4", "--dim", "1"]) == 1
    assert "validation error" in capsys.readouterr().err


def test_cli_sample_noise(tmp_path, capsys):
    code = main(["sample-noise", "--kernel", "ou:beta=1", "--n", "64", "--samples", "500", "--out", str(tmp_path)])
    assert code == 0 and (tmp_path / "covariance.csv").exists()


def test_cli_simulate(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"grid": {"n": 64, "half_extent": 8.0}, "time": {"T": 0.05},
                                   "recording": {"snapshot_stride": 10}}))
    code = main(["simulate", "--config", str(cfg), "--lambda", "0.7", "--out", str(tmp_path / "o")])
    assert code == 0
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert "trajectory.csv" in names and "final.field" in names and any(n.startswith("snapshot_") for n in names)


def test_cli_simulate_bad_override(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"grid": {"n": 64}}))
    assert main(["simulate", "--config", str(cfg), "--T", "-1", "--out", str(tmp_path / "o")]) == 1


def test_cli_sweep_and_report(tmp_path, capsys):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(yaml.safe_dump({"grid": {"n": 64, "half_extent": 8.0}, "time": {"T": 0.05},
                                   "sweep": {"lambdas": [0.5], "replicas": 2, "R_max": 4.0}}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--seed", "3"]) == 0
    first = capsys.readouterr().out
    assert main(["report", "--out", str(tmp_path / "s")]) == 0
    assert capsys.readouterr().out == first


def test_cli_lemma_suite_negative_control(tmp_path):
    params = dict(_QUICK, covariance_bound={"kernels": ["constant"], "dims": [1], "samples": 5, "phi_scale": 10.0})
    path = tmp_path / "p.yaml"
    path.write_text(yaml.safe_dump(params))
    assert main(["lemma-suite", "--params", str(path), "--out", str(tmp_path / "r")]) == 3


def test_cli_lemma_suite_inadmissible_kernel(tmp_path):
    params = dict(_QUICK, covariance_bound={"kernels": ["riesz:alpha=1.5"], "dims": [1], "samples": 2})
    path = tmp_path / "p.yaml"
    path.write_text(yaml.safe_dump(params))
    assert main(["lemma-suite", "--params", str(path), "--out", str(tmp_path / "r")]) == 1
