"""Command-line entry point.

Exit status: 0 success, 1 domain infeasibility (no commitment, failed optimizer,
baseline pressure violation), 2 input or usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .attack_chain import initial_distribution, state_distribution
from .io import InputError, load_manifest
from .power_market import InfeasibleScuc, solve_dcopf, solve_scuc, write_dispatch_csv, write_schedule_csv
from .scenario import (StageError, run_baseline, run_monte_carlo, simulate_sample, togf_problem,
                       write_plot_data, write_results_csv, write_stats_json, write_trace)
from .gas_optimal_control import solve_togf, write_iteration_log, write_solution_csv

log = logging.getLogger("cybergas")

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _env_int(name: str):
    v = os.environ.get(name)
    if v is None or v == "":
        return None
    try:
        return int(v)
    except ValueError:
        raise InputError(f"${name}", name, f"expected an integer, got {v!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cybergas", description="Cyber-attack impact studies on coupled gas and power systems.")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("manifest")
        return s

    cmd("validate", "load and check every input file")
    s = cmd("baseline", "commitment, dispatch, optimal compression and its transient check")
    s.add_argument("--out")
    s = cmd("simulate", "one Monte Carlo sample with full trace export")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s = cmd("montecarlo", "Monte Carlo study")
    s.add_argument("-n", "--samples", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s = cmd("togf", "optimal compression for the baseline gas nominations")
    s.add_argument("--out")
    s = cmd("scuc", "day-ahead unit commitment")
    s.add_argument("--out")
    s = cmd("chain", "state distribution of the attacker chain")
    s.add_argument("--t", type=float, required=True, dest="t")
    return p


def _out_dir(path):
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def _cmd_validate(args):
    cfg = load_manifest(args.manifest)
    print(f"{cfg.name}: {cfg.system.n_buses} buses, {cfg.system.n_gens} generators, "
          f"{cfg.network.n_nodes} gas nodes, {cfg.network.n_compressors} compressors, "
          f"{cfg.chain.n_states} cyber states, horizon {cfg.horizon} h: ok")
    return EXIT_OK


def _cmd_scuc(args):
    cfg = load_manifest(args.manifest)
    t0 = time.perf_counter()
    res = solve_scuc(cfg.system, cfg.load, gap_tol=cfg.gap_tol)
    print(f"cost {res.cost:.2f} bound {res.bound:.2f} gap {res.gap:.2e} nodes {res.nodes} "
          f"({time.perf_counter() - t0:.1f} s)")
    for g, gid in enumerate(res.schedule.gen_ids):
        print(f"{gid:>6} " + "".join("1" if x > 0.5 else "." for x in res.schedule.u[g]))
    out = _out_dir(args.out)
    if out:
        write_schedule_csv(cfg.system, res.schedule, res.dispatch, os.path.join(out, "schedule.csv"))
    return EXIT_OK


def _cmd_togf(args):
    cfg = load_manifest(args.manifest)
    scuc = solve_scuc(cfg.system, cfg.load, gap_tol=cfg.gap_tol)
    disp = solve_dcopf(cfg.system, scuc.schedule, cfg.load, voll=cfg.voll)
    _, prob = togf_problem(cfg, disp, scuc.schedule)
    sol = solve_togf(prob)
    print(f"status {sol.status} J_G {sol.objective:.6g} iterations {sol.iterations} "
          f"kkt {max(sol.stationarity, sol.feasibility, sol.complementarity):.2e}")
    out = _out_dir(args.out)
    if out:
        write_solution_csv(sol, os.path.join(out, "togf.csv"))
        write_iteration_log(sol, os.path.join(out, "togf_iterations.csv"))
    return EXIT_OK if sol.converged else EXIT_INFEASIBLE


def _write_baseline(cfg, base, out):
    write_schedule_csv(cfg.system, base.schedule, base.scuc.dispatch, os.path.join(out, "schedule.csv"))
    write_dispatch_csv(cfg.system, base.dispatch, os.path.join(out, "dispatch.csv"))
    write_solution_csv(base.togf, os.path.join(out, "togf.csv"))


def _cmd_baseline(args):
    cfg = load_manifest(args.manifest)
    base = run_baseline(cfg)
    print(f"base cost {base.base_cost:.2f}  commitment cost {base.scuc.cost:.2f}  J_G {base.togf.objective:.6g}")
    out = _out_dir(args.out)
    if out:
        _write_baseline(cfg, base, out)
    return EXIT_OK


def _cmd_simulate(args):
    seed = args.seed if args.seed is not None else _env_int("CYBERGAS_SEED")
    cfg = load_manifest(args.manifest)
    seed = cfg.seed if seed is None else seed
    base = run_baseline(cfg)
    tr = simulate_sample(cfg, base, seed)
    r = tr.result
    wins = ", ".join(f"{w.compressor_id} [{w.t_start:.2f}, {w.t_end:.2f}] h" for w in r.windows) or "none"
    print(f"seed {seed}: outages {wins}")
    print(f"curtailed {r.curtailed or 'none'}  cost increase {r.cost_increase_pct:.3f}%  "
          f"shed {r.shed_mwh:.3f} MWh  curtailed gas {r.curtailed_gas_kg:.1f} kg")
    out = _out_dir(args.out)
    if out:
        write_trace(tr, cfg.network, out)
        if tr.dispatch is not None:
            write_dispatch_csv(cfg.system, tr.dispatch, os.path.join(out, "dispatch.csv"))
    return EXIT_OK


def _cmd_montecarlo(args):
    seed = args.seed if args.seed is not None else _env_int("CYBERGAS_SEED")
    jobs = args.jobs if args.jobs is not None else _env_int("CYBERGAS_JOBS")
    jobs = 1 if jobs is None else jobs
    if jobs < 1:
        raise InputError("--jobs", "jobs", "must be at least 1")
    if args.samples is not None and args.samples < 1:
        raise InputError("-n", "samples", "must be at least 1")
    cfg = load_manifest(args.manifest, seed=seed, n_samples=args.samples)
    t0 = time.perf_counter()
    results, stats = run_monte_carlo(cfg, jobs=jobs)
    out = _out_dir(args.out)
    write_results_csv(results, os.path.join(out, "results.csv"))
    write_stats_json(stats, os.path.join(out, "stats.json"))
    write_plot_data(stats, results, out)
    print(f"{stats.n_samples} samples ({stats.n_failed} failed, {stats.n_with_contingency} with outages) "
          f"in {time.perf_counter() - t0:.1f} s")
    for c, f in stats.per_compressor.items():
        print(f"  {c}: n={f.count} median {f.median:.3f}% max {f.max:.3f}%")
    r = "n/a" if stats.correlation is None else f"{stats.correlation:.4f}"
    print(f"  R(curtailed gas, cost increase) = {r}")
    return EXIT_OK


def _cmd_chain(args):
    cfg = load_manifest(args.manifest)
    if args.t < 0:
        raise InputError("--t", "t", "must be nonnegative")
    pi = state_distribution(cfg.chain, initial_distribution(cfg.chain), args.t)
    print(json.dumps({s: float(np.round(p, 12)) for s, p in zip(cfg.chain.states, pi)}, indent=1))
    return EXIT_OK


COMMANDS = {
    "validate": _cmd_validate,
    "baseline": _cmd_baseline,
    "simulate": _cmd_simulate,
    "montecarlo": _cmd_montecarlo,
    "togf": _cmd_togf,
    "scuc": _cmd_scuc,
    "chain": _cmd_chain,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleScuc as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StageError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
