"""Command-line interface: ingestion, exit codes, schemas, determinism."""

from __future__ import annotations

import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ivqr.cli import main, read_table
from ivqr.fixpoint import fit
from ivqr.model import Sample
from ivqr.simulate import LocationScaleConfig, gen_location_scale


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    """A small symmetric-design dataset written as a role-named CSV."""
    sample, truth = gen_location_scale(
        LocationScaleConfig(n=250, d_d=1, design="symmetric", seed=909)
    )
    path = tmp_path_factory.mktemp("data") / "ls.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "d1", "x1", "z1"])
        for i in range(sample.n):
            writer.writerow(
                [
                    repr(float(v))
                    for v in (
                        sample.y[i],
                        sample.d[i, 0],
                        sample.x[i, 1],
                        sample.z[i, 0],
                    )
                ]
            )
    return path, sample


def test_read_table_roundtrip(data_csv, tmp_path):
    path, sample = data_csv
    header, table = read_table(str(path))
    assert header == ["y", "d1", "x1", "z1"]
    rebuilt = Sample(
        y=table["y"],
        d=table["d1"],
        x=np.column_stack([np.ones(sample.n), table["x1"]]),
        z=table["z1"],
    )
    # full round-trip precision: ingest reproduces the sample bitwise
    np.testing.assert_array_equal(rebuilt.y, sample.y)
    np.testing.assert_array_equal(rebuilt.d, sample.d)
    np.testing.assert_array_equal(rebuilt.z, sample.z)


def test_estimate_json_matches_library(data_csv, tmp_path):
    path, sample = data_csv
    out = tmp_path / "est.json"
    code = main(
        [
            "estimate",
            "--input",
            str(path),
            "--y",
            "y",
            "--d",
            "d1",
            "--x",
            "x1",
            "--z",
            "z1",
            "--taus",
            "0.5",
            "--output-json",
            str(out),
        ]
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert report["command"] == "estimate"
    assert report["algorithm"] == "brent"
    (entry,) = report["results"]
    assert entry["status"] == "converged"
    direct = fit(sample, 0.5)
    np.testing.assert_allclose(
        entry["theta"]["theta_end"], direct.theta.theta_end, atol=1e-12
    )
    np.testing.assert_allclose(
        entry["theta"]["theta1"], direct.theta.theta1, atol=1e-12
    )
    assert entry["theta"]["theta1_names"] == ["(intercept)", "x1"]
    assert entry["diagnostics"]["verdict"] in ("pass", "warn")
    assert "wall_seconds" in report and "timing_note" in report


def test_estimate_csv_schema(data_csv, tmp_path):
    path, _ = data_csv
    out = tmp_path / "est.csv"
    code = main(
        [
            "estimate",
            "--input", str(path),
            "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
            "--taus", "0.25,0.75",
            "--output-csv", str(out),
        ]
    )
    assert code == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["tau", "name", "block", "estimate"]
    assert len(rows) == 1 + 2 * 3  # two quantiles x three coefficients
    # full-precision cells parse back to floats
    float(rows[1][3])


def test_exit_code_2_on_config_errors(data_csv, tmp_path):
    path, _ = data_csv
    base = ["estimate", "--input", str(path), "--y", "y", "--z", "z1"]
    assert main(base + ["--d", "nope"]) == 2  # unknown column
    assert main(base + ["--d", "d1", "--taus", "2.0"]) == 2  # tau out of range
    assert main(base + ["--d", "d1", "--x", "d1"]) == 2  # overlapping roles
    assert main(["estimate", "--y", "y", "--d", "d1", "--z", "z1"]) == 2  # no input
    missing_cfg = ["estimate", "--config", str(tmp_path / "absent.cfg")]
    assert main(missing_cfg) == 2
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("not a key value line\n")
    assert main(["estimate", "--config", str(bad_cfg)]) == 2


def test_exit_code_3_on_data_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,d1,z1\n1.0,2.0,oops\n")
    argv = ["estimate", "--input", str(bad), "--y", "y", "--d", "d1", "--z", "z1"]
    assert main(argv) == 3
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    argv[2] = str(empty)
    assert main(argv) == 3


def test_exit_code_4_on_solver_failure(data_csv, tmp_path):
    path, _ = data_csv
    out = tmp_path / "fail.json"
    code = main(
        [
            "estimate",
            "--input", str(path),
            "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
            "--algorithm", "contraction",
            "--max-iter", "1",
            "--no-canonicalize",
            "--output-json", str(out),
        ]
    )
    assert code == 4
    # the report is still written, with the failing status recorded
    report = json.loads(out.read_text())
    assert report["results"][0]["status"] == "max_iter"


def test_bootstrap_command_deterministic(data_csv, tmp_path):
    path, _ = data_csv
    draws_a = tmp_path / "a.csv"
    draws_b = tmp_path / "b.csv"
    argv = [
        "bootstrap",
        "--input", str(path),
        "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
        "--b", "25", "--seed", "4", "--no-canonicalize",
        "--output-json", str(tmp_path / "boot.json"),
    ]
    assert main(argv + ["--draws-csv", str(draws_a)]) == 0
    assert main(argv + ["--draws-csv", str(draws_b)]) == 0
    assert draws_a.read_bytes() == draws_b.read_bytes()
    report = json.loads((tmp_path / "boot.json").read_text())
    entry = report["results"][0]
    assert entry["successful_draws"] + entry["failures"] == 25
    lo, hi = entry["ci_lower"], entry["ci_upper"]
    point = entry["point"]["theta1"] + entry["point"]["theta_end"]
    assert all(a <= p <= b for a, p, b in zip(lo, point, hi))
    assert report["seed"] == 4


def test_bootstrap_b_below_minimum_is_config_error(data_csv):
    path, _ = data_csv
    code = main(
        [
            "bootstrap",
            "--input", str(path),
            "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
            "--b", "10",
        ]
    )
    assert code == 2


def test_simulate_command_with_config_file(tmp_path):
    cfg = tmp_path / "mc.cfg"
    cfg.write_text(
        "# tiny smoke study\n"
        "dgp=location-scale\n"
        "n=250\n"
        "design=symmetric\n"
        "estimators=brent\n"
        "taus=0.5\n"
        "reps=2\n"
        "seed=6\n"
        "no-canonicalize=true\n"
    )
    out_json = tmp_path / "mc.json"
    out_csv = tmp_path / "mc.csv"
    code = main(
        [
            "simulate",
            "--config", str(cfg),
            "--output-json", str(out_json),
            "--output-csv", str(out_csv),
        ]
    )
    assert code == 0
    payload = json.loads(out_json.read_text())
    assert payload["command"] == "simulate"
    assert payload["reps_requested"] == 2
    assert payload["seed"] == 6
    rows = list(csv.reader(open(out_csv)))
    assert rows[0][:2] == ["estimator", "tau"]
    # flags override the config file
    code = main(
        [
            "simulate",
            "--config", str(cfg),
            "--reps", "1",
            "--output-json", str(out_json),
        ]
    )
    assert code == 0
    assert json.loads(out_json.read_text())["reps_requested"] == 1


def test_plot_fixed_point_outputs(data_csv, tmp_path):
    path, _ = data_csv
    svg = tmp_path / "fp.svg"
    table = tmp_path / "fp.csv"
    code = main(
        [
            "plot-fixed-point",
            "--input", str(path),
            "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
            "--taus", "0.25,0.5,0.75",
            "--points", "15",
            "--output-svg", str(svg),
            "--output-csv", str(table),
        ]
    )
    assert code == 0
    rows = list(csv.reader(open(table)))
    assert rows[0] == ["tau", "theta2", "m"]
    assert len(rows) == 1 + 3 * 15
    root = ET.parse(svg).getroot()
    tags = [el.tag.split("}")[-1] for el in root.iter()]
    assert tags.count("polyline") == 3  # one curve per quantile
    assert tags.count("circle") == 3  # one crossing marker per quantile
    # four quantiles exceed the plot budget
    code = main(
        [
            "plot-fixed-point",
            "--input", str(path),
            "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
            "--taus", "0.2,0.4,0.6,0.8",
        ]
    )
    assert code == 2


def test_diagnose_command(data_csv, capsys):
    path, _ = data_csv
    code = main(
        [
            "diagnose",
            "--input", str(path),
            "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
            "--taus", "0.5",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "spectral radius proxy" in out
    assert "verdict: pass" in out


def test_console_entry_point(data_csv):
    path, _ = data_csv
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "ivqr.cli",
            "estimate",
            "--input", str(path),
            "--y", "y", "--d", "d1", "--x", "x1", "--z", "z1",
            "--taus", "0.5",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    payload = json.loads(proc.stdout)
    assert payload["results"][0]["status"] == "converged"
