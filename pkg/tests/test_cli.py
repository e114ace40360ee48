import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import zipperlab.cli as cli
from zipperlab.checks import CheckResult
from zipperlab.config import ExperimentConfig, load_config, parse_text
from zipperlab.errors import ConfigInvalid, MissingInput, NumericalFailureBudgetExceeded

ROOT = Path(__file__).resolve().parents[1]

SMALL = """\
experiment_id = "small"   # inline comments are allowed
master_seed = 3
n_samples = 12
distances = [4, 8, 12, 16]
s = [0.1]

[alpha]
kind = "scaled_identity"
norm = 0.1

[z]
r = [1.05]
theta = [0.0]

[moments]
quantities = ["fractional_green", "second_order"]
"""


def _write(tmp_path, text=SMALL, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- configuration ----------------------------------------------------------------------


def test_parse_sections_and_comments():
    m = parse_text(SMALL)
    assert m["alpha.norm"] == 0.1 and m["z.r"] == [1.05] and m["experiment_id"] == "small"


def test_load_and_override(tmp_path):
    cfg = load_config(_write(tmp_path), ["alpha.norm=0.2", "z.r=[2.0, 1.5]", "window=fixed_margin:4"])
    assert cfg.alpha_norm == 0.2 and cfg.z_r == [2.0, 1.5] and cfg.window == "fixed_margin:4"
    assert cfg.params().alpha_norm == pytest.approx(0.2)
    assert len(cfg.z_grid()) == 2


@pytest.mark.parametrize(
    "override",
    ["alpha.norm=1.2", "alpha.norm=0", "s=[1.5]", "bernoulli_p=1.0", "L=0", "no_such_key=3", "window=sideways", "n_samples=2.5"],
)
def test_invalid_values_are_rejected(tmp_path, override):
    with pytest.raises(ConfigInvalid):
        load_config(_write(tmp_path), [override])


def test_off_circle_is_enforced_for_resolvents(tmp_path):
    status, summary = cli.run("moments", str(_write(tmp_path)), ["z.r=[1.0]"], str(tmp_path / "o"))
    assert status == 2 and summary["error"]["type"] == "ConfigInvalid"


def test_thread_precedence(monkeypatch):
    cfg = ExperimentConfig()
    monkeypatch.setenv("ZIPPERLAB_THREADS", "5")
    assert cfg.resolved_threads() == 5
    cfg.threads = 3
    assert cfg.resolved_threads() == 3 and cfg.resolved_threads(7) == 7
    monkeypatch.setenv("ZIPPERLAB_THREADS", "x")
    cfg.threads = None
    with pytest.raises(ConfigInvalid):
        cfg.resolved_threads()


def test_dotted_keys_round_trip():
    cfg = ExperimentConfig()
    back = ExperimentConfig.from_mapping(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    assert "alpha.norm" in cfg.to_dict() and "lyapunov.n_steps" in cfg.to_dict()


# --- output formatting --------------------------------------------------------------------


def test_fmt_uses_17_significant_digits():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert float(cli.fmt(1 / 3)) == 1 / 3
    assert cli.fmt(7) == "7" and cli.fmt(None) == "" and cli.fmt(True) == "true"


def test_emit_plotdata_exact_exponential(tmp_path):
    m, f = tmp_path / "moments.csv", tmp_path / "fits.csv"
    rows = [("g", "fractional_green", 1, "scaled_identity", 0.1, 0.1, 1.05, 0.0, d, 2 * math.exp(-0.25 * d), 0.01, 10, 0, "spectral") for d in (4, 8, 12)]
    cli.write_csv(m, cli.MOMENTS_HEADER, rows)
    cli.write_csv(f, cli.FITS_HEADER, [("g", "fractional_green", -0.25, math.log(2), 1.0, 3)])
    (path,) = cli.emit_plotdata(m, f, tmp_path / "plot")
    data = np.loadtxt(path)
    assert np.allclose(data[:, 4], data[:, 1], rtol=1e-9)
    assert np.all(np.diff(data[:, 4]) < 0)


def test_emit_plotdata_missing_inputs(tmp_path):
    with pytest.raises(MissingInput):
        cli.emit_plotdata(tmp_path / "none.csv", tmp_path / "none2.csv", tmp_path)
    m, f = tmp_path / "m.csv", tmp_path / "f.csv"
    cli.write_csv(m, cli.MOMENTS_HEADER, [])
    cli.write_csv(f, cli.FITS_HEADER, [])
    with pytest.raises(MissingInput):
        cli.emit_plotdata(m, f, tmp_path / "plot")


# --- subcommands --------------------------------------------------------------------------


def test_moments_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    status, summary = cli.run("moments", str(_write(tmp_path)), [], str(out), threads=2)
    assert status == 0
    rows = _rows(out / "moments.csv")
    assert list(rows[0]) == list(cli.MOMENTS_HEADER)
    assert {r["quantity"] for r in rows} == {"fractional_green", "second_order"}
    assert len(_rows(out / "fits.csv")) == 2
    assert any(p.suffix == ".dat" for p in (out / "plotdata").iterdir())
    data = json.loads((out / "summary.json").read_text())
    for key in ("experiment_id", "config", "failures", "wall_time_s", "results"):
        assert key in data


def test_moments_far_from_circle_are_bounded(tmp_path):
    out = tmp_path / "out"
    status, _ = cli.run("moments", str(_write(tmp_path)), ["z.r=[2.0]", "moments.quantities=[\"fractional_green\"]"], str(out))
    assert status == 0
    assert all(float(r["mean"]) <= 1.0 for r in _rows(out / "moments.csv"))


def test_summary_reload_reproduces_run(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run("moments", str(_write(tmp_path)), [], str(a))[0] == 0
    assert cli.run("moments", str(a / "summary.json"), [], str(b))[0] == 0
    assert (a / "moments.csv").read_text() == (b / "moments.csv").read_text()
    assert (a / "fits.csv").read_text() == (b / "fits.csv").read_text()


def test_lyapunov_on_circle(tmp_path):
    out = tmp_path / "out"
    over = ["L=2", "alpha.norm=0.3", "z.r=[1.0]", "lyapunov.n_steps=1000", "lyapunov.n_realizations=6"]
    status, summary = cli.run("lyapunov", str(_write(tmp_path)), over, str(out), threads=2)
    assert status == 0
    rows = _rows(out / "lyapunov.csv")
    g = [float(r["gamma_k"]) for r in rows]
    e = [float(r["stderr"]) for r in rows]
    assert g[0] > g[1] > 0
    assert abs(g[0] + g[3]) < 3 * (e[0] + e[3]) and abs(g[1] + g[2]) < 3 * (e[1] + e[2])


def test_green_check_spectral_and_dynloc(tmp_path):
    cfg = _write(tmp_path)
    status, summary = cli.run("green-check", str(cfg), ["green.n_instances=6"], str(tmp_path / "g"))
    assert status == 0 and (tmp_path / "g" / "green_checks.csv").exists()
    assert all(float(r["rel_err_formula_vs_direct"]) <= 1e-8 for r in _rows(tmp_path / "g" / "green_checks.csv"))
    status, summary = cli.run("spectral-power", str(cfg), [], str(tmp_path / "s"))
    assert status == 0 and summary["results"]["strictly_decreasing"]
    over = ["n_max=20", "n_samples=4", "dynloc.source=[11, 0]", "window=fixed_margin:0"]
    status, summary = cli.run("dynloc", str(cfg), over, str(tmp_path / "d"))
    assert status == 0
    trace = _rows(tmp_path / "d" / "dynloc_trace.csv")
    assert list(trace[0]) == list(cli.TRACE_HEADER)


def test_exit_status_for_failure_budget(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalFailureBudgetExceeded("synthetic")

    monkeypatch.setattr(cli, "fractional_moment_scan", boom)
    status, summary = cli.run("moments", str(_write(tmp_path)), [], str(tmp_path / "o"))
    assert status == 3 and summary["error"]["type"] == "NumericalFailureBudgetExceeded"
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["exit_status"] == 3


def test_exit_status_for_invariant_failure(tmp_path, monkeypatch):
    monkeypatch.setattr(cli.checks, "run_suite", lambda seed, workers=1: [CheckResult("g", "c", 1.0, 0.0)])
    status, summary = cli.run("verify", str(_write(tmp_path)), [], str(tmp_path / "o"))
    assert status == 4 and summary["results"]["failed"] == ["g.c"]


def test_unknown_subcommand_and_missing_config(tmp_path):
    assert cli.run("dance", None)[0] == 2
    assert cli.run("moments", str(tmp_path / "absent.cfg"))[0] == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "zipperlab.cli", "spectral-power", "--config", str(ROOT / "configs" / "default.cfg"), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "spectral_power.csv").exists()
    proc = subprocess.run(
        [sys.executable, "-m", "zipperlab.cli", "moments", "--set", "alpha.norm=3", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2 and "ConfigInvalid" in proc.stderr
