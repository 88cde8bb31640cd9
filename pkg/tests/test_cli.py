import csv
import json

import numpy as np
import pytest

from slipflow.cli import main, run
from slipflow.config import parse_config


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_solve_zero_data_is_constant_flow(tmp_path):
    out = tmp_path / "zero"
    assert main(["--n", "16", "--out", str(out), "--quiet"]) == 0
    rows = read_csv(out / "fields.csv")
    assert len(rows) == 17 * 17
    assert all(float(r["v_1"]) == 1.0 and float(r["v_2"]) == 0.0 and float(r["rho"]) == 1.0 for r in rows)
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["exit_code"] == 0 and man["seed"] == 0
    assert man["config"]["N"] == 16 and "numpy" in man["versions"] and man["wall_time_s"] >= 0
    for name in ("fields.vtk", "convergence.csv", "estimates.csv", "summary.txt"):
        assert (out / name).exists()


def test_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[grid]\nN = 16\n[data]\ndelta = 1e-3\n")
    for name in ("a", "b"):
        assert main(["--config", str(cfg), "--out", str(tmp_path / name), "--quiet"]) == 0
    for f in ("fields.csv", "fields.vtk", "convergence.csv", "estimates.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.slow
def test_mms_mode_reports_rate(tmp_path):
    spec = parse_config(f"mode = mms\noutput_dir = {tmp_path}\n[grid]\nlevels = 16, 32\n")
    assert run(spec) == 0
    rows = read_csv(tmp_path / "mms.csv")
    assert [int(r["N"]) for r in rows] == [16, 32]
    for key in ("rate_v", "rate_rho"):
        assert 1.7 <= float(rows[1][key]) <= 2.3


def test_uniqueness_mode(tmp_path):
    spec = parse_config(f"mode = uniqueness\noutput_dir = {tmp_path}\n[grid]\nN = 16\n[data]\ndelta = 1e-3\n")
    assert run(spec) == 0
    rows = read_csv(tmp_path / "uniqueness.csv")
    assert len(rows) == 3 and all(r["status"] == "converged" for r in rows)
    dist = np.loadtxt(tmp_path / "distances.csv", delimiter=",", skiprows=1)
    assert dist.shape == (4, 4) and dist.max() <= 1e-7
    assert "max pairwise distance" in (tmp_path / "summary.txt").read_text()


def test_estimates_and_sweep_modes(tmp_path):
    text = "[grid]\nN = 16\n[data]\ndelta = 1e-3\nsweep_deltas = 1e-3, 1e-4\n[solver]\nworkers = 2\n"
    spec = parse_config(f"mode = estimates\noutput_dir = {tmp_path / 'est'}\n" + text)
    assert run(spec) == 0
    names = [r["name"] for r in read_csv(tmp_path / "est" / "estimates.csv")]
    assert names.count("energy") == 3 and "korn" in names and "interpolation" in names
    spec = parse_config(f"mode = sweep\noutput_dir = {tmp_path / 'sw'}\n" + text)
    assert run(spec) == 0
    rows = read_csv(tmp_path / "sw" / "sweep.csv")
    ratios = [float(r["norm_over_delta"]) for r in rows]
    assert max(ratios) / min(ratios) <= 2
    assert (tmp_path / "sw" / "delta_1" / "fields.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[physics]\ngamma = 1.0\n")
    assert main(["--config", str(cfg)]) == 2
    record = json.loads(capsys.readouterr().err)
    assert record["details"] == {"key": "gamma", "line": 2}
    assert main(["--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["--n", "4"]) == 2


def test_smallness_failure_record(tmp_path):
    out = tmp_path / "big"
    spec = parse_config(f"output_dir = {out}\n[grid]\nN = 16\n[data]\ndelta = 5\n")
    assert run(spec) == 4
    failure = json.loads((out / "failure.json").read_text())
    assert failure["error"] == "SmallnessViolation" and failure["exit_code"] == 4
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "failed" and "failure.json" in man["artifacts"]


def test_nonconvergence_failure_record(tmp_path):
    out = tmp_path / "slow"
    spec = parse_config(f"output_dir = {out}\n[grid]\nN = 16\n[data]\ndelta = 1e-3\n[solver]\nmax_outer = 1\n")
    assert run(spec) == 3
    assert json.loads((out / "failure.json").read_text())["error"] == "OuterNoConvergence"
