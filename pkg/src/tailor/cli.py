"""Command-line front end.

    tailor solve    --config scenario.json --out DIR
    tailor trace    --config scenario.json --trace delays.txt --out DIR
    tailor simulate --config scenario.json --out DIR [--seed N] [--cycles N] [--emit-trajectory]
    tailor compare  --config scenarios.json --out DIR [--seed N] [--cycles N]
    tailor table1   --out DIR [--seed N] [--cycles N]

Exit codes: 0 success, 2 configuration error, 3 numerical failure or
non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import config as cfgmod
from .baselines import ThresholdPolicy, aoi_np_solve
from .distributions import TraceError, from_samples
from .simulator import ComparisonRow, SimConfig, SimulationError, compare, simulate
from .solver import SolverError, export_policy_csv, policy_iteration

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

SIM_FIELDS = ("scenario", "policy", "avg_cost", "stderr", "n_samples", "n_preemptions",
              "n_deliveries", "sim_time")

log = logging.getLogger("tailor")


class NotConverged(Exception):
    pass


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _sim_override(sc, args) -> SimConfig:
    sim = sc.sim
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "cycles", None) is not None:
        changes["cycles"] = args.cycles
        changes["warmup_cycles"] = None
    try:
        return dataclasses.replace(sim, **changes) if changes else sim
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from None


def _solve_and_write(sc, out: Path) -> dict:
    solved = policy_iteration(sc.dist, sc.kappa_s, sc.kappa_p, sc.grids,
                              eps_v=sc.eps_v, eps_rho=sc.eps_rho, max_iter=sc.max_iter)
    export_policy_csv(solved, out / "policy.csv")
    summary = {
        "scenario": sc.name,
        "distribution": sc.dist.to_dict(),
        "kappa_s": sc.kappa_s,
        "kappa_p": sc.kappa_p,
        "rho": solved.rho,
        "iterations": solved.iterations,
        "converged": solved.converged,
        "residuals": [{"dv": dv, "drho": dr} for dv, dr in solved.residuals],
        "max_linear_residual": max(solved.linear_residuals),
        "wall_time": solved.wall_time,
        "grid": sc.grids.summary(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if not solved.converged:
        raise NotConverged(f"{sc.name}: no convergence in {solved.iterations} iterations")
    return summary


def run_solve(config_path, out_dir) -> dict:
    sc = cfgmod.build(cfgmod.load_scenario(config_path))
    return _solve_and_write(sc, _out_dir(out_dir))


def run_trace(config_path, trace_path, out_dir) -> dict:
    cfg = cfgmod.load_scenario(config_path)
    dist = from_samples(trace_path)
    sc = cfgmod.build(cfg, dist=dist)
    return _solve_and_write(sc, _out_dir(out_dir))


def write_sim_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = _writer(fh)
        wr.writerow(SIM_FIELDS)
        for scenario, policy, r in rows:
            wr.writerow([scenario, policy, f"{r.avg_cost:.10g}", f"{r.stderr:.6g}", r.n_samples,
                         r.n_preemptions, r.n_deliveries, f"{r.elapsed_sim_time:.10g}"])


def write_trajectory(path, traj) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = _writer(fh)
        wr.writerow(["t", "aoi", "mode", "event"])
        for t, aoi, mode, event in traj:
            wr.writerow([f"{t:.12g}", f"{aoi:.12g}", mode, event])


def run_simulate(config_path, out_dir, seed=None, cycles=None, emit_trajectory=False) -> list:
    sc = cfgmod.build(cfgmod.load_scenario(config_path))
    sim = _sim_override(sc, argparse.Namespace(seed=seed, cycles=cycles))
    out = _out_dir(out_dir)
    solved = policy_iteration(sc.dist, sc.kappa_s, sc.kappa_p, sc.grids,
                              eps_v=sc.eps_v, eps_rho=sc.eps_rho, max_iter=sc.max_iter)
    beta = aoi_np_solve(sc.dist, sc.kappa_s).beta
    policies = [("TAILOR", solved.policy), ("AoI-NP", ThresholdPolicy(beta)),
                ("ZW-NP", ThresholdPolicy(0.0))]
    rows = []
    for name, pol in policies:
        r = simulate(pol, sc.dist, sc.kappa_s, sc.kappa_p, sim, trajectory=emit_trajectory)
        rows.append((sc.name, name, r))
        if emit_trajectory:
            write_trajectory(out / f"trajectory_{name}.csv", r.trajectory)
    write_sim_csv(out / "simulation.csv", rows)
    if not solved.converged:
        raise NotConverged(f"{sc.name}: solver did not converge")
    return rows


def write_comparison(path, rows: list[ComparisonRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = _writer(fh)
        wr.writerow(ComparisonRow.CSV_FIELDS)
        for row in rows:
            wr.writerow(row.csv_row())


def _workers() -> int:
    raw = os.environ.get("TAILOR_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise cfgmod.ConfigError(f"TAILOR_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _run_compare_configs(configs, out_dir, seed=None, cycles=None) -> list[ComparisonRow]:
    scenarios = [cfgmod.build(c) for c in configs]
    for sc in scenarios:
        sc.sim = _sim_override(sc, argparse.Namespace(seed=seed, cycles=cycles))
    out = _out_dir(out_dir)
    rows = compare(scenarios, None, workers=min(_workers(), max(1, len(scenarios))))
    write_comparison(out / "comparison.csv", rows)
    write_sim_csv(out / "simulation.csv",
                  [(r.scenario, name, res) for r in rows for name, res in r.sims.items()])
    if not all(r.converged for r in rows):
        raise NotConverged("some scenarios did not converge")
    return rows


def run_compare(config_path, out_dir, seed=None, cycles=None) -> list[ComparisonRow]:
    return _run_compare_configs(cfgmod.load_scenario_set(config_path), out_dir, seed, cycles)


def run_table1(out_dir, seed=None, cycles=None) -> list[ComparisonRow]:
    rows = _run_compare_configs(cfgmod.table1_scenarios(), out_dir, seed, cycles)
    for r in rows:
        ref = cfgmod.TABLE1_REPORTED[r.scenario]
        log.info("%s: TAILOR %.4g (reported %.3g), AoI-NP %.4g (%.3g), ZW-NP %.4g (%.3g)",
                 r.scenario, r.tailor_rho, ref[0], r.aoinp_rho, ref[1], r.zw_rho, ref[2])
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tailor", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--out", required=True, help="output directory")

    def sim_flags(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--cycles", type=int, default=None)

    common(sub.add_parser("solve", help="solve one scenario"))
    sp = sub.add_parser("trace", help="solve with an empirical delay trace")
    common(sp)
    sp.add_argument("--trace", required=True, help="file with one service time per line")
    sp = sub.add_parser("simulate", help="solve, then simulate TAILOR and both baselines")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--emit-trajectory", action="store_true")
    sp = sub.add_parser("compare", help="comparison table over a scenario set")
    common(sp)
    sim_flags(sp)
    sp = sub.add_parser("table1", help="built-in four-scenario benchmark")
    common(sp, config=False)
    sim_flags(sp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        if args.command == "solve":
            s = run_solve(args.config, args.out)
            log.info("rho = %.10g (%d iterations)", s["rho"], s["iterations"])
        elif args.command == "trace":
            s = run_trace(args.config, args.trace, args.out)
            log.info("rho = %.10g (%d iterations)", s["rho"], s["iterations"])
        elif args.command == "simulate":
            run_simulate(args.config, args.out, args.seed, args.cycles, args.emit_trajectory)
        elif args.command == "compare":
            run_compare(args.config, args.out, args.seed, args.cycles)
        elif args.command == "table1":
            run_table1(args.out, args.seed, args.cycles)
    except (cfgmod.ConfigError, TraceError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (NotConverged, SolverError, SimulationError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    log.debug("done in %.1f s", time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
