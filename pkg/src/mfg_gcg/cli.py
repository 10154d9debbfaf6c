"""
Experiment runner.

Commands::

    mfg-gcg run <config.json>      run one experiment
    mfg-gcg sweep <dir>            run every *.json config in a directory
    mfg-gcg validate <config.json> check a config and print it with defaults filled

Flags ``--out``, ``--iters``, ``--seed`` and ``--schedule`` override the
config. Set ``MFG_GCG_LOG_LEVEL`` (e.g. ``DEBUG``) for more logging.

Outputs of ``run`` in the output directory:

* ``iterates.csv``: one row per iteration, written as the run progresses.
* ``summary.json``: rate fits, reference provenance, invariant checks, the
  Monte Carlo cross-check and wall-clock timings.
* ``fields.bin`` and ``fields.json`` when ``run.dump_fields`` is true: the
  final ``m, w, u, gamma, P`` as little-endian float64 C-order arrays,
  concatenated; the JSON sidecar lists each array's shape and byte offset.

Exit status: 0 on success, 2 on an invariant breach or solver failure,
3 on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics
from .config import ExperimentConfig, apply_overrides, cfl_precheck, config_from_dict, load_config, read_raw
from .errors import ConfigError, MfgError
from .fokker_planck import MASS_TOL, FlowPair
from .gcg import DEVIATION_NAMES, GcgAborted, GcgState, IterateRecord, StepSchedule, best_response, predict_couplings, run

logger = logging.getLogger("mfg_gcg")

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_CONFIG = 3

CSV_HEADER = ("k", "delta_k", "potential_cost", "exploitability", "primal_gap") + DEVIATION_NAMES

RATE_WINDOW = (16, 256)
FW_EPS_SLOPE = (-1.3, -0.8)
FW_SIGMA_SLOPE = (-0.75, -0.35)
FP_SPREAD_MAX = 5.0


def _fmt(value) -> str:
    return str(value) if isinstance(value, int) else repr(float(value))


def csv_row(record: IterateRecord) -> list[str]:
    return [_fmt(getattr(record, name)) for name in CSV_HEADER]


class IterateLog:
    """Write iterate rows as they are produced so an aborted run leaves a valid prefix."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_HEADER)
        self._fh.flush()

    def write(self, record: IterateRecord) -> None:
        self._writer.writerow(csv_row(record))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


@dataclass
class RunResult:
    status: int
    out_dir: Path
    summary: dict


def _rate_summary(records: list[IterateRecord], schedule: StepSchedule, has_reference: bool) -> dict:
    k_hi = min(RATE_WINDOW[1], records[-1].k)
    window = (RATE_WINDOW[0], k_hi)
    fits, checks = {}, {}
    if k_hi <= window[0]:
        return {"window": list(window), "fits": fits, "checks": checks,
                "note": "too few iterations for a rate fit"}
    metrics = ["sigma"] + (["eps", *DEVIATION_NAMES] if has_reference else [])
    for metric in metrics:
        try:
            fits[metric] = diagnostics.fit_rate(records, metric, window).to_dict()
        except MfgError as exc:
            fits[metric] = {"error": str(exc)}
    if schedule.kind == "frank_wolfe":
        for metric, (lo, hi) in (("eps", FW_EPS_SLOPE), ("sigma", FW_SIGMA_SLOPE)):
            slope = fits.get(metric, {}).get("slope")
            if slope is not None:
                checks[f"{metric}_slope_in_window"] = {"window": [lo, hi], "slope": slope,
                                                       "pass": bool(lo <= slope <= hi)}
    if schedule.kind == "fictitious_play" and has_reference:
        scaled = [r.primal_gap * (r.k + 1) / math.log(r.k + 1) for r in records if window[0] <= r.k <= window[1]]
        value = diagnostics.spread(scaled)
        checks["eps_log_scaled_spread"] = {"max": FP_SPREAD_MAX, "value": value,
                                           "pass": bool(value <= FP_SPREAD_MAX)}
    return {"window": list(window), "fits": fits, "checks": checks}


def _invariant_summary(problem, records: list[IterateRecord], final_belief: FlowPair,
                       has_reference: bool) -> dict:
    m = final_belief.m.values
    mass = problem.grid.integrate(m)
    c_emp = diagnostics.fit_descent_constant(records)
    out = {
        "mass_max_drift": float(np.max(np.abs(mass - 1.0))),
        "min_density": float(np.min(m)),
        "descent_constant": c_emp,
        "descent_violations": diagnostics.descent_violations(records, c_emp),
        "min_exploitability": min(r.exploitability for r in records),
    }
    out["mass_ok"] = out["mass_max_drift"] <= MASS_TOL and out["min_density"] > 0
    if has_reference:
        out["certificate_violations"] = diagnostics.certificate_violations(records)
    out["pass"] = bool(out["mass_ok"] and not out.get("certificate_violations"))
    return out


def _dump_fields(out_dir: Path, problem, belief: FlowPair) -> None:
    coupling = predict_couplings(problem, belief)
    _, value = best_response(problem, coupling)
    arrays = [("m", belief.m.values), ("w", belief.w.values), ("u", value.u.values),
              ("gamma", coupling.gamma.values), ("P", coupling.price)]
    layout, offset = [], 0
    with open(out_dir / "fields.bin", "wb") as fh:
        for name, arr in arrays:
            data = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(data.tobytes())
            layout.append({"name": name, "shape": list(data.shape), "offset": offset})
            offset += data.nbytes
    sidecar = {"dtype": "<f8", "order": "C", "total_bytes": offset, "arrays": layout,
               "axes": {"m": "(level, *space)", "w": "(level, component, *space)",
                        "u": "(level, *space)", "gamma": "(level, *space)", "P": "(level, k)"}}
    (out_dir / "fields.json").write_text(json.dumps(sidecar, indent=2) + "\n")


def _monte_carlo(problem, config: ExperimentConfig, reference) -> dict:
    mc = config.monte_carlo
    if mc.n_paths == 0 or reference is None:
        return {"enabled": False}
    grid = problem.grid
    u0 = reference.value.u.values[0]
    points = []
    ok = True
    for p in mc.points:
        idx = tuple(int(round(c * grid.nx)) % grid.nx for c in p)
        x = [i * grid.dx for i in idx]
        est, se = diagnostics.monte_carlo_value(problem, reference.coupling, x, mc.n_paths,
                                                config.run.seed, value=reference.value)
        u = float(u0[idx])
        tol = 3 * se + 0.05 * (1 + abs(u))
        passed = bool(abs(est - u) <= tol)
        ok = ok and passed
        points.append({"x": x, "estimate": est, "standard_error": se, "u": u, "tolerance": tol,
                       "pass": passed})
    return {"enabled": True, "n_paths": mc.n_paths, "seed": config.run.seed, "points": points, "pass": ok}


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    """
    Run one experiment and write its artifacts.

    Configuration errors raised while running map to exit status 3 and
    invariant or solver failures to 2; the partial ``iterates.csv`` is kept.
    """
    out = Path(out_dir if out_dir is not None else config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.dumps())
    timings: dict[str, float] = {}
    t_start = time.perf_counter()
    summary: dict = {"name": config.name, "config": config.to_dict()}
    log = None
    try:
        problem = config.build_problem()
        summary["cfl"] = cfl_precheck(problem)
        schedule = StepSchedule.parse(config.run.schedule)
        reference = None
        if config.run.reference_budget > 0:
            t0 = time.perf_counter()
            reference = diagnostics.make_reference(problem, config.run.reference_budget)
            timings["reference_s"] = time.perf_counter() - t0
            summary["reference"] = reference.provenance()
        tracker = diagnostics.DeviationTracker(problem, reference) if reference is not None else None
        log = IterateLog(out / "iterates.csv")

        def on_record(record, measured, state):
            if tracker is not None:
                tracker(record, measured, state)
            log.write(record)

        t0 = time.perf_counter()
        result = run(problem, schedule, config.run.n_iters, callback=on_record)
        timings["run_s"] = time.perf_counter() - t0
        log.close()
        records = result.records
        last = records[-1]
        summary["final"] = {"k": last.k, "potential_cost": last.potential_cost,
                            "exploitability": last.exploitability, "primal_gap": last.primal_gap,
                            "hjb_residual_max": float(np.max(result.state.value.residual))}
        summary["rates"] = _rate_summary(records, schedule, reference is not None)
        summary["invariants"] = _invariant_summary(problem, records, result.state.belief,
                                                   reference is not None)
        t0 = time.perf_counter()
        summary["monte_carlo"] = _monte_carlo(problem, config, reference)
        timings["monte_carlo_s"] = time.perf_counter() - t0
        if config.run.dump_fields:
            _dump_fields(out, problem, result.state.belief)
        status = EXIT_OK if summary["invariants"]["pass"] else EXIT_INVARIANT
    except GcgAborted as exc:
        summary["error"] = str(exc)
        summary["completed_iterations"] = len(exc.records)
        status = EXIT_CONFIG if isinstance(exc.cause, ConfigError) else EXIT_INVARIANT
    except ConfigError as exc:
        summary["error"] = str(exc)
        status = EXIT_CONFIG
    except MfgError as exc:
        summary["error"] = str(exc)
        status = EXIT_INVARIANT
    finally:
        if log is not None:
            log.close()
    timings["total_s"] = time.perf_counter() - t_start
    summary["timings"] = timings
    summary["status"] = status
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    return RunResult(status, out, summary)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _run_one(job: tuple[int, dict, str]) -> dict:
    index, raw, out = job
    run_dir = Path(out) / f"{index:03d}_{raw.get('name', 'run')}"
    try:
        config = config_from_dict(raw)
    except ConfigError as exc:
        return {"name": raw.get("name", ""), "dir": str(run_dir), "status": EXIT_CONFIG, "error": str(exc)}
    result = run_experiment(config, run_dir)
    s = result.summary
    fits = s.get("rates", {}).get("fits", {})
    final = s.get("final", {})
    return {
        "name": config.name,
        "dir": str(run_dir),
        "schedule": config.run.schedule,
        "status": result.status,
        "final_exploitability": final.get("exploitability", math.nan),
        "final_primal_gap": final.get("primal_gap", math.nan),
        "eps_slope": fits.get("eps", {}).get("slope", math.nan),
        "sigma_slope": fits.get("sigma", {}).get("slope", math.nan),
        "error": s.get("error", ""),
    }


SWEEP_COLUMNS = ("name", "schedule", "status", "final_exploitability", "final_primal_gap",
                 "eps_slope", "sigma_slope", "dir", "error")


def sweep(configs: Sequence[ExperimentConfig | dict], out: str | Path, workers: int | None = None) -> list[dict]:
    """
    Run several experiments, one per worker process, and write ``comparison.csv``.

    Each run writes into its own subdirectory; a failing config is reported
    in its row without stopping the others.
    """
    if not configs:
        raise ConfigError("no configs")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, c.to_dict() if isinstance(c, ExperimentConfig) else dict(c), str(out))
            for i, c in enumerate(configs)]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(job) for job in jobs]
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows


# -- command line ---------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfg-gcg", description="Conditional gradient solver for potential mean field games.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, target, text in (("run", "config", "run one experiment"),
                               ("sweep", "directory", "run every *.json config in a directory"),
                               ("validate", "config", "validate a config and print it with defaults")):
        p = sub.add_parser(name, help=text)
        p.add_argument(target)
        p.add_argument("--out", help="output directory")
        p.add_argument("--iters", type=int, help="number of iterations")
        p.add_argument("--seed", type=int, help="Monte Carlo seed")
        p.add_argument("--schedule", help="fw, fp or const:<delta>")
        if name == "sweep":
            p.add_argument("--workers", type=int, help="worker processes")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("MFG_GCG_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"iters": args.iters, "seed": args.seed, "schedule": args.schedule}
    try:
        if args.command == "sweep":
            paths = sorted(Path(args.directory).glob("*.json"))
            raws = [apply_overrides(read_raw(p), **overrides) for p in paths]
            for raw, path in zip(raws, paths):
                raw.setdefault("name", path.stem)
            rows = sweep(raws, args.out or "sweep_out", args.workers)
            print(f"wrote {Path(args.out or 'sweep_out') / 'comparison.csv'} ({len(rows)} runs)")
            return max((r["status"] for r in rows), default=EXIT_OK)
        config = load_config(args.config, out=args.out, **overrides)
        if args.command == "validate":
            info = cfl_precheck(config.build_problem())
            sys.stdout.write(config.dumps())
            print(f"CFL number {info['cfl_number']:.4g} (bound 1, max |v| {info['vmax']:.4g})")
            return EXIT_OK
        result = run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if result.status != EXIT_OK:
        print(f"run failed (exit {result.status}): {result.summary.get('error', 'invariant check failed')}",
              file=sys.stderr)
    else:
        print(f"wrote {result.out_dir}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
