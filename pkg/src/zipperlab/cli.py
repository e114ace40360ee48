"""Command line entry point: ``zipperlab <subcommand> --config PATH [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import checks
from .config import ExperimentConfig, load_config
from .disorder import sample_window
from .errors import (
    ConfigInvalid,
    InsufficientData,
    InvariantFailure,
    MissingInput,
    NumericalFailureBudgetExceeded,
    ThresholdViolated,
    ZipperError,
)
from .green import contraction_bounds, green_direct, green_via_transfer, schur_analysis
from .moments import (
    DecayFit,
    MomentEstimate,
    boundary_pair,
    decay_fit,
    default_n_theta,
    dynamical_localization_probe,
    fractional_moment_scan,
    inverse_phase_moment,
    inverse_product_estimates,
    second_order_scan,
    spectral_power_quadrature,
)
from .rng import Stream
from .transfer import lyapunov_spectrum, window_transfer_product
from .zipper import build_finite_zipper

SUBCOMMANDS = ("lyapunov", "green-check", "moments", "dynloc", "spectral-power", "verify")

MOMENTS_HEADER = (
    "experiment_id", "quantity", "L", "alpha_kind", "alpha_norm", "s", "r", "theta",
    "distance", "mean", "stderr", "n_samples", "n_discarded", "norm_kind",
)  # fmt: skip
FITS_HEADER = ("experiment_id", "quantity", "slope", "intercept", "r_squared", "n_points")
LYAPUNOV_HEADER = ("L", "alpha_kind", "alpha_norm", "re_z", "im_z", "k", "gamma_k", "stderr", "n_steps", "n_realizations")
GREEN_HEADER = (
    "instance_id", "L", "alpha_norm", "re_z", "im_z", "n", "m", "parity",
    "rel_err_formula_vs_direct", "norm_M", "norm_N", "f_bound_ok",
)  # fmt: skip
TRACE_HEADER = ("realization", "n", "k", "p", "amplitude")
SPECTRAL_HEADER = ("r", "n", "n_theta", "re_value", "im_value", "re_direct", "im_direct", "error")
VERIFY_HEADER = ("group", "check", "value", "tolerance", "passed")


# --- output helpers -------------------------------------------------------------------


def fmt(value) -> str:
    """17 significant digits for reals; integers and strings as is; None as empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: Path) -> list[dict]:
    if not Path(path).exists():
        raise MissingInput(f"{path} not found")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def emit_plotdata(moments_csv: Path, fits_csv: Path, out_dir: Path) -> list[Path]:
    """One text file per (experiment group, quantity): distance, mean, log-mean and the fit overlay."""
    rows = read_csv(moments_csv)
    fits = {(f["experiment_id"], f["quantity"]): f for f in read_csv(fits_csv)}
    groups: dict = defaultdict(list)
    for r in rows:
        groups[(r["experiment_id"], r["quantity"])].append(r)
    if not rows or not fits:
        raise MissingInput("no estimates or fits to plot")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key, items in groups.items():
        fit = fits.get(key)
        if fit is None:
            continue
        slope, intercept = float(fit["slope"]), float(fit["intercept"])
        name = "__".join(part.replace("/", "_") for part in key) + ".dat"
        path = out_dir / name
        with open(path, "w") as fh:
            fh.write("# distance mean stderr log_mean fit_mean fit_log_mean\n")
            for r in sorted(items, key=lambda r: int(r["distance"])):
                d, mean = int(r["distance"]), float(r["mean"])
                log_mean = math.log(mean) if mean > 0 else float("nan")
                fit_log = intercept + slope * d
                vals = [d, mean, float(r["stderr"]), log_mean, math.exp(fit_log), fit_log]
                fh.write(" ".join(fmt(v) for v in vals) + "\n")
        written.append(path)
    if not written:
        raise MissingInput("no estimate group has a matching fit")
    return written


# --- subcommands ----------------------------------------------------------------------


class RunContext:
    def __init__(self, cfg: ExperimentConfig, out: Path, workers: int):
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.params = cfg.params()
        self.counters = {"discarded": 0, "fallback_direct": 0}
        self.results: dict = {}
        self.artifacts: list[str] = []

    def write(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.artifacts.append(name)


def _moment_row(ctx: RunContext, group: str, e: MomentEstimate, r, theta):
    p = ctx.params
    return (
        group, e.quantity, p.L, p.alpha_kind, p.alpha_norm, e.s, r, theta,
        e.distance, e.mean, e.stderr, e.n_samples, e.n_discarded, e.norm_kind,
    )  # fmt: skip


def _fit_row(group: str, quantity: str, f: DecayFit):
    return (group, quantity, f.slope, f.intercept, f.r_squared, f.n_points)


def _try_fit(ctx, estimates, group, quantity, fit_rows):
    try:
        f = decay_fit(estimates, ctx.cfg.exclusion_threshold)
    except InsufficientData:
        return None
    fit_rows.append(_fit_row(group, quantity, f))
    return {"slope": f.slope, "slope_stderr": f.slope_stderr, "r_squared": f.r_squared, "n_points": f.n_points}


def cmd_lyapunov(ctx: RunContext) -> None:
    cfg, p = ctx.cfg, ctx.params
    rows, summary = [], []
    for r, th, z in cfg.z_grid():
        spectrum = lyapunov_spectrum(z, p, cfg.lyapunov_n_steps, cfg.lyapunov_n_realizations, Stream(cfg.master_seed, "lyapunov"), ctx.workers)
        for k, (g, e) in enumerate(zip(spectrum.gammas, spectrum.stderrs), 1):
            rows.append((p.L, p.alpha_kind, p.alpha_norm, z.real, z.imag, k, g, e, spectrum.n_steps, spectrum.n_realizations))
        entry = {"r": r, "theta": th, "gammas": spectrum.gammas.tolist(), "stderrs": spectrum.stderrs.tolist()}
        if r == 1.0:
            entry["symmetry_defects"] = spectrum.symmetry_defects().tolist()
        summary.append(entry)
    ctx.write("lyapunov.csv", LYAPUNOV_HEADER, rows)
    ctx.results["spectra"] = summary


def cmd_green_check(ctx: RunContext) -> None:
    cfg, p = ctx.cfg, ctx.params
    cfg.validate_off_circle()
    lo, hi = cfg.green_span
    rows = []
    worst, siegel_viol, f_viol, inst = 0.0, 0, 0, 0
    for r, th, z in cfg.z_grid():
        for i in range(cfg.green_n_instances):
            st = Stream(cfg.master_seed, "green_check", inst)
            parity = "even" if i % 2 == 0 else "odd"
            n = 0
            m = n + lo + i % (hi - lo + 1)
            a, b = (2 * n if parity == "even" else 2 * n + 1), 2 * m + 1
            window = sample_window(p, a - 1, b + 2, st)
            U, V = boundary_pair(p.L, cfg.boundary, st)
            G = green_via_transfer(window, z, n, m, U, V, parity).block
            Gd = green_direct(build_finite_zipper(window, a, b, U, V), z, a, b).block
            err = float(np.linalg.norm(G - Gd) / np.linalg.norm(Gd))
            worst = max(worst, err)
            norm_M = norm_N = f_ok = None
            if parity == "even":
                bundle = schur_analysis(window_transfer_product(z, window, n, m, U, "even"), V, raise_on_failure=False)
                norm_M, norm_N = bundle.norm_M, bundle.norm_N
                siegel_viol += int(not (norm_M < 1 and norm_N < 1))
                try:
                    f_ok = contraction_bounds(window, z, n, m, U).all_bounds_hold
                    f_viol += int(not f_ok)
                except ThresholdViolated:
                    f_ok = None
            rows.append((inst, p.L, p.alpha_norm, z.real, z.imag, n, m, parity, err, norm_M, norm_N, f_ok))
            inst += 1
    ctx.write("green_checks.csv", GREEN_HEADER, rows)
    ctx.results.update(
        {"max_rel_err": worst, "n_instances": inst, "siegel_violations": siegel_viol, "f_bound_violations": f_viol}
    )
    if worst > 1e-8:
        raise InvariantFailure(f"formula and direct solve differ by {worst:.3e}")


def cmd_moments(ctx: RunContext) -> None:
    cfg, p = ctx.cfg, ctx.params
    cfg.validate_off_circle()
    policy = cfg.window_policy()
    rows, fit_rows, fits = [], [], {}
    k0 = cfg.moments_k0
    for iz, (r, th, z) in enumerate(cfg.z_grid()):
        for quantity in cfg.moments_quantities:
            s_values = cfg.s if quantity in ("fractional_green", "inverse_phase", "inverse_product") else [None]
            for js, s in enumerate(s_values):
                group = f"{cfg.experiment_id}/z{iz}" + ("" if s is None else f"s{js}")
                if quantity == "fractional_green":
                    est = fractional_moment_scan(
                        p, [z], s, cfg.distances, policy, cfg.n_samples, Stream(cfg.master_seed, "fractional"),
                        ctx.workers, k0, boundary=cfg.boundary, counters=ctx.counters,
                    )  # fmt: skip
                elif quantity == "second_order":
                    est = second_order_scan(
                        p, z, k0, tuple(cfg.moments_coords), cfg.distances, policy, cfg.n_samples,
                        Stream(cfg.master_seed, "second_order"), ctx.workers, cfg.boundary,
                    )  # fmt: skip
                elif quantity == "inverse_phase":
                    est = [inverse_phase_moment(p, z, s, cfg.n_samples, Stream(cfg.master_seed, "inverse_phase"), ctx.workers)]
                elif quantity == "inverse_product":
                    est = inverse_product_estimates(
                        z, p, s, cfg.distances, cfg.n_samples, Stream(cfg.master_seed, "inverse_probe"), ctx.workers,
                        cfg.moments_inverse_mode,
                    )  # fmt: skip
                else:
                    raise ConfigInvalid(f"unknown moment quantity {quantity!r}")
                if quantity == "second_order":
                    ctx.counters["discarded"] += est[0].n_discarded if est else 0
                rows.extend(_moment_row(ctx, group, e, r, th) for e in est)
                fit = _try_fit(ctx, est, group, quantity, fit_rows) if len(est) > 1 else None
                fits[f"{group}:{quantity}"] = {
                    "means": [e.mean for e in est],
                    "max_mean": max(e.mean for e in est),
                    "fit": fit,
                }
    ctx.write("moments.csv", MOMENTS_HEADER, rows)
    ctx.write("fits.csv", FITS_HEADER, fit_rows)
    ctx.results["groups"] = fits
    if fit_rows:
        emit_plotdata(ctx.out / "moments.csv", ctx.out / "fits.csv", ctx.out / "plotdata")


def cmd_dynloc(ctx: RunContext) -> None:
    cfg, p = ctx.cfg, ctx.params
    policy = cfg.window_policy()
    l, q = cfg.dynloc_source
    targets = [(l + d, q) for d in cfg.distances]
    trace: list = []
    est = dynamical_localization_probe(
        p, (l, q), targets, cfg.n_max, policy if policy.kind == "fixed_margin" else "fixed_margin:0",
        cfg.n_samples, Stream(cfg.master_seed, "dynloc"), ctx.workers, trace, cfg.boundary,
    )  # fmt: skip
    group = f"{cfg.experiment_id}/dynloc"
    rows = [_moment_row(ctx, group, e, 1.0, 0.0) for e in est]
    fit_rows: list = []
    fit = _try_fit(ctx, est, group, "dynloc_sup", fit_rows)
    rec = trace[0]
    blocks = sorted({l} | {k for k, _ in targets})
    trace_rows = [
        (0, n, k, pp, rec.amplitudes[n, k - rec.a, pp]) for n in range(rec.amplitudes.shape[0]) for k in blocks for pp in range(p.L)
    ]
    ctx.write("moments.csv", MOMENTS_HEADER, rows)
    ctx.write("fits.csv", FITS_HEADER, fit_rows)
    ctx.write("dynloc_trace.csv", TRACE_HEADER, trace_rows)
    converged = all(abs(e.mean - e.extra["half_horizon_mean"]) < max(e.stderr, 1e-15) for e in est)
    ctx.results.update({"means": [e.mean for e in est], "fit": fit, "horizon_converged": converged})
    if fit_rows:
        emit_plotdata(ctx.out / "moments.csv", ctx.out / "fits.csv", ctx.out / "plotdata")


def cmd_spectral_power(ctx: RunContext) -> None:
    cfg, p = ctx.cfg, ctx.params
    a, b = cfg.spectral_interval
    k, pp, l, q = cfg.spectral_entry
    st = Stream(cfg.master_seed, "spectral")
    window = sample_window(p, a, b + 1, st)
    op = build_finite_zipper(window, a, b, *boundary_pair(p.L, cfg.boundary, st))
    n = cfg.spectral_n
    D = np.linalg.matrix_power(op.dense(), n) if n >= 0 else np.linalg.matrix_power(op.dense().conj().T, -n)
    exact = D[op.flat_index(k, pp), op.flat_index(l, q)]
    rows, errs = [], []
    for r in cfg.spectral_r:
        nth = default_n_theta(r, n)
        v = spectral_power_quadrature(op, n, r, nth, (k, pp), (l, q))
        err = abs(v - exact)
        errs.append(err)
        rows.append((r, n, nth, v.real, v.imag, exact.real, exact.imag, err))
    ctx.write("spectral_power.csv", SPECTRAL_HEADER, rows)
    order = np.argsort(cfg.spectral_r)
    sorted_errs = [errs[i] for i in order]
    ctx.results.update({"errors": errs, "strictly_decreasing": all(x > y for x, y in zip(sorted_errs, sorted_errs[1:]))})


def cmd_verify(ctx: RunContext) -> None:
    results = checks.run_suite(ctx.cfg.master_seed, ctx.workers)
    ctx.write("verify.csv", VERIFY_HEADER, [(c.group, c.name, c.value, c.tolerance, c.passed) for c in results])
    groups: dict = {}
    for c in results:
        groups[c.group] = groups.get(c.group, True) and c.passed
    ctx.results["groups"] = groups
    failed = [f"{c.group}.{c.name}" for c in results if not c.passed]
    ctx.results["failed"] = failed
    if failed:
        raise InvariantFailure("failed checks: " + ", ".join(failed))


COMMANDS = {
    "lyapunov": cmd_lyapunov,
    "green-check": cmd_green_check,
    "moments": cmd_moments,
    "dynloc": cmd_dynloc,
    "spectral-power": cmd_spectral_power,
    "verify": cmd_verify,
}


def run(
    subcommand: str,
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
    out: Optional[str] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> tuple[int, dict]:
    """Run one subcommand; returns (exit status, summary dict). Artifacts go to the output directory."""
    t0 = time.perf_counter()
    summary: dict = {"subcommand": subcommand}
    status = 0
    ctx = None
    try:
        if subcommand not in COMMANDS:
            raise ConfigInvalid(f"unknown subcommand {subcommand!r}")
        cfg = load_config(config_path, overrides)
        if seed is not None:
            cfg.master_seed = int(seed)
        out_dir = Path(out if out is not None else cfg.output_dir)
        ctx = RunContext(cfg, out_dir, cfg.resolved_threads(threads))
        summary.update({"experiment_id": cfg.experiment_id, "config": cfg.to_dict()})
        COMMANDS[subcommand](ctx)
    except ZipperError as exc:
        status = getattr(exc, "exit_status", 3)
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
    summary["exit_status"] = status
    if ctx is not None:
        summary["failures"] = dict(ctx.counters)
        summary["results"] = ctx.results
        summary["artifacts"] = ctx.artifacts
        summary["wall_time_s"] = time.perf_counter() - t0
        ctx.out.mkdir(parents=True, exist_ok=True)
        with open(ctx.out / "summary.json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return status, summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zipperlab", description="Random scattering-zipper numerical laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key/value config file or a previous summary.json")
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--threads", type=int, help="worker threads (default: config, then ZIPPERLAB_THREADS, then 1)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    status, summary = run(args.subcommand, args.config, args.set, args.out, args.seed, args.threads)
    if "error" in summary:
        print(f"zipperlab {args.subcommand}: {summary['error']['type']}: {summary['error']['message']}", file=sys.stderr)
    else:
        print(f"zipperlab {args.subcommand}: ok ({summary.get('wall_time_s', 0.0):.2f} s)")
    return status


if __name__ == "__main__":
    sys.exit(main())
