"""Command-line entry point: ``slipflow --config run.cfg --out results``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import sympy

from . import __version__
from .config import MODES, RunSpec, load_config, parse_config, validate
from .errors import ConfigurationError, SlipFlowError
from .estimates import (
    EstimateReport,
    constant_spread,
    korn_constant,
    reports_for_solution,
    reports_to_csv,
    summary_table,
    verify_interpolation,
)
from .fields import ScalarField, fields_to_csv, fields_to_vtk
from .fixed_point import HISTORY_COLUMNS, FlowSolution, continue_to_zero, solve_regularized, uniqueness_probe
from .grid import build_grid
from .manufactured import mms_study, observed_rates


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _table(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r, dict) else _fmt(c) for c in (columns if isinstance(r, dict) else r)])
    return buf.getvalue()


class Run:
    """Output directory bookkeeping for one run."""

    def __init__(self, spec: RunSpec, out: Path):
        self.spec = spec
        self.out = out
        self.artifacts: list[str] = []
        self.summary: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.artifacts.append(name)

    def write_solution(self, sol: FlowSolution, prefix: str = "") -> None:
        fields = {"v": sol.v, "rho": sol.rho, "u": sol.pert.u, "w": sol.pert.w}
        self.write(prefix + "fields.csv", fields_to_csv(fields))
        self.write(prefix + "fields.vtk", fields_to_vtk(fields))
        self.write(prefix + "convergence.csv", _table(HISTORY_COLUMNS, sol.history))


def _solution_lines(sol: FlowSolution) -> list[str]:
    return [
        f"final eps                 {sol.eps:.3e}",
        f"||u||_W2p + ||w||_W1p     {sol.norms['u_w2p'] + sol.norms['w_w1p']:.6e}",
        f"||v - vbar||_W2p          {sol.norms['v_minus_vbar_w2p']:.6e}",
        f"||rho - 1||_W1p           {sol.norms['rho_minus_1_w1p']:.6e}",
        f"mass flux defect          {sol.mass_flux_defect:.3e}",
        f"limit-system residual     {sol.limit_residual:.3e}",
    ]


def _mode_solve(run: Run) -> None:
    spec = run.spec
    grid = build_grid(spec.N)
    params = spec.physical_params()
    sol = continue_to_zero(spec.solve_config(), params, spec.boundary_data(grid))
    run.write_solution(sol)
    reports = reports_for_solution(sol.solves[-1], spec.estimate_bound)
    run.write("estimates.csv", reports_to_csv(reports))
    run.summary += _solution_lines(sol) + ["", summary_table(reports)]


def _mode_mms(run: Run) -> None:
    spec = run.spec
    params = spec.physical_params()
    levels = mms_study(spec.levels, spec.mms_delta, params, None)
    rv = observed_rates([lv.error_v for lv in levels])
    rr = observed_rates([lv.error_rho for lv in levels])
    rows = []
    for k, lv in enumerate(levels):
        rows.append({
            "N": lv.N, "h": 1.0 / lv.N, "error_v_l2": lv.error_v, "error_rho_l2": lv.error_rho,
            "rate_v": rv[k - 1] if k else "", "rate_rho": rr[k - 1] if k else "",
            "final_eps": lv.eps, "mass_flux_defect": lv.mass_flux_defect,
        })
    run.write("mms.csv", _table(list(rows[0]), rows))
    run.summary += [f"N={lv.N:<4} err_v={lv.error_v:.4e} err_rho={lv.error_rho:.4e}" for lv in levels]
    run.summary.append("observed order v:   " + ", ".join(f"{r:.3f}" for r in rv))
    run.summary.append("observed order rho: " + ", ".join(f"{r:.3f}" for r in rr))


def _mode_estimates(run: Run) -> None:
    spec = run.spec
    grid = build_grid(spec.N)
    params = spec.physical_params()
    cfg = spec.solve_config()
    data = spec.boundary_data(grid)
    reports: list[EstimateReport] = []
    last = None
    for eps in spec.sweep_eps:
        last = solve_regularized(eps, cfg, params, data)
        reports += reports_for_solution(last, spec.estimate_bound)
    korn = korn_constant(grid, params)
    reports.append(EstimateReport("korn", korn.value, 0.0, korn.value, korn.value > 0, grid.N, None, 1.0,
                                  {"iterations": korn.iterations, "eigsh": korn.eigsh_value}))
    w = last.pert.w
    if not np.any(w.values):
        w = ScalarField.from_function(grid, lambda x1, x2: np.sin(np.pi * x1) * np.cos(np.pi * x2))
    reports.append(verify_interpolation(w, params.p, seed=spec.seed))
    run.write("estimates.csv", reports_to_csv(reports))
    spreads = {
        name: constant_spread([r for r in reports if r.name == name])
        for name in ("energy", "transport", "apriori")
    }
    run.write("constants.csv", _table(["estimate", "max_over_min"], [{"estimate": k, "max_over_min": v} for k, v in spreads.items()]))
    run.summary += [summary_table(reports), ""]
    run.summary += [f"{k:<10} constant max/min over eps = {v:.4f}" for k, v in spreads.items()]


def _mode_sweep(run: Run) -> None:
    spec = run.spec
    grid = build_grid(spec.N)
    params = spec.physical_params()
    cfg = spec.solve_config()

    def one(delta):
        return continue_to_zero(cfg, params, spec.boundary_data(grid, delta))

    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            sols = list(pool.map(one, spec.sweep_deltas))
    else:
        sols = [one(d) for d in spec.sweep_deltas]
    rows = []
    for k, (delta, sol) in enumerate(zip(spec.sweep_deltas, sols)):
        run.write_solution(sol, prefix=f"delta_{k}/")
        norm = sol.norms["u_w2p"] + sol.norms["w_w1p"]
        rows.append({"delta": delta, "norm": norm, "norm_over_delta": norm / delta,
                     "final_eps": sol.eps, "mass_flux_defect": sol.mass_flux_defect})
    run.write("sweep.csv", _table(list(rows[0]), rows))
    ratios = [r["norm_over_delta"] for r in rows]
    run.summary += [f"delta={r['delta']:.1e} norm={r['norm']:.4e} norm/delta={r['norm_over_delta']:.4f}" for r in rows]
    run.summary.append(f"max/min of norm/delta: {max(ratios) / min(ratios):.4f}")


def _mode_uniqueness(run: Run) -> None:
    spec = run.spec
    grid = build_grid(spec.N)
    params = spec.physical_params()
    cfg = spec.solve_config()
    data = spec.boundary_data(grid)
    sol = continue_to_zero(cfg, params, data)
    run.write_solution(sol)
    rep = uniqueness_probe(sol, cfg, params, data, spec.n_starts, spec.seed, workers=spec.workers)
    rows = [{"start": k, **{c: s.get(c, "") for c in ("start_norm", "status", "error")}} for k, s in enumerate(rep.starts)]
    run.write("uniqueness.csv", _table(["start", "start_norm", "status", "error"], rows))
    n = len(rep.distances)
    run.write("distances.csv", _table([f"s{j}" for j in range(n)], [[d for d in row] for row in rep.distances]))
    run.summary += _solution_lines(sol)
    run.summary.append(f"starts converged: {sum(s['status'] == 'converged' for s in rep.starts)}/{len(rep.starts)}")
    run.summary.append(f"max pairwise distance (H1 x L2): {rep.max_distance:.3e}")


MODE_RUNNERS = {
    "solve": _mode_solve,
    "mms": _mode_mms,
    "estimates": _mode_estimates,
    "sweep": _mode_sweep,
    "uniqueness": _mode_uniqueness,
}


def _versions() -> dict[str, str]:
    return {
        "slipflow": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sympy.__version__,
    }


def run(spec: RunSpec, quiet: bool = True) -> int:
    """Execute ``spec`` and write its artifacts; returns the exit status."""
    out = Path(spec.output_dir)
    r = Run(spec, out)
    t0 = time.perf_counter()
    status, code, failure = "ok", 0, None
    np.random.seed(spec.seed)
    try:
        MODE_RUNNERS[spec.mode](r)
    except SlipFlowError as exc:
        status, code, failure = "failed", exc.exit_code, exc.record()
    except Exception as exc:  # never end in a bare traceback
        status, code = "failed", 1
        failure = {"error": type(exc).__name__, "message": str(exc), "exit_code": 1,
                   "details": {"traceback": traceback.format_exc()}}
    if failure is not None:
        r.write("failure.json", json.dumps(failure, indent=2, sort_keys=True) + "\n")
        r.summary.append(f"FAILED ({failure['error']}): {failure['message']}")
    if r.summary:
        r.write("summary.txt", "\n".join(r.summary) + "\n")
    manifest = {
        "status": status,
        "exit_code": code,
        "mode": spec.mode,
        "seed": spec.seed,
        "config": spec.as_dict(),
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "artifacts": sorted(r.artifacts),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    if not quiet:
        print("\n".join(r.summary))
        print(f"[{spec.mode}] {status} in {manifest['wall_time_s']:.2f}s, artifacts in {out}")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="slipflow",
        description="Steady compressible flow with slip boundary conditions on the unit square.",
    )
    ap.add_argument("--config", help="configuration file")
    ap.add_argument("--mode", choices=MODES, help="override the configured mode")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="random seed")
    ap.add_argument("--n", type=int, help="grid intervals per edge")
    ap.add_argument("--quiet", action="store_true", help="do not print the summary")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_config(args.config) if args.config else parse_config("")
        if args.mode:
            spec.mode = args.mode
        if args.out:
            spec.output_dir = args.out
        if args.seed is not None:
            spec.seed = args.seed
        if args.n is not None:
            if args.n < 8:
                raise ConfigurationError(f"--n must be >= 8, got {args.n}")
            spec.N = args.n
        validate(spec)
    except (ConfigurationError, OSError) as exc:
        record = exc.record() if isinstance(exc, SlipFlowError) else {
            "error": type(exc).__name__, "message": str(exc), "exit_code": 2, "details": {}}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2
    return run(spec, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
