"""End-to-end attack impact workflow and the Monte Carlo study around it.

Per sample: attacker path -> compressor outage windows -> transient gas
simulation with the affected ratios forced to 1 -> pressure violations ->
curtailment of gas-fired units (re-simulating until the violations clear or no
unit is left) -> real-time redispatch -> cost and shed relative to baseline.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .attack_chain import (ContingencyWindow, CyberChain, detection_time, extract_contingencies,
                           sample_trajectory)
from .coupling import (CurtailmentDecision, FuelMap, GasDemandProfile, curtailed_gas_mass, curtailment_policy,
                       gas_demand_from_dispatch, residual_violations)
from .gas_network import GasNetwork
from .gas_optimal_control import TogfProblem, TogfSolution, solve_togf
from .gas_transient import (DEFAULT_ATOL, DEFAULT_RTOL, ControlSignal, GasTrajectory, PiecewiseLinear,
                            apply_contingencies, integrate, min_pressure_violations)
from .interior_point import IPOptions
from .power_market import (CommitmentSchedule, DispatchResult, InfeasibleScuc, PowerSystem, ScucResult,
                           solve_dcopf, solve_scuc)

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A workflow stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


@dataclass
class ScenarioConfig:
    system: PowerSystem
    network: GasNetwork
    chain: CyberChain
    fuel_map: FuelMap
    load: np.ndarray                 # (hours, buses) MW
    horizon: int = 24
    n_samples: int = 1000
    seed: int = 0
    voll: float = 10_000.0
    gap_tol: float = 1e-4
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    togf_points: int = 25
    togf_margin: float = 0.0         # kg/m^3 added to every minimum density in the optimizer
    ramp_minutes: float = 5.0
    escalate: bool = True
    deploy_reserves: bool = False   # let post-contingency redispatch use held reserve
    cap_gas_at_baseline: bool = True
    max_curtail_rounds: int = 10
    name: str = "study"

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=float)
        problems = []
        if self.load.shape != (self.horizon, self.system.n_buses):
            problems.append(f"load shape {self.load.shape} does not match ({self.horizon}, {self.system.n_buses})")
        problems += self.fuel_map.check(self.system, self.network)
        missing = [c for c in self.chain.compressors if c not in self.network.compressor_ids]
        if missing:
            problems.append(f"cyber actuator map names unknown compressors {missing}")
        if self.n_samples < 1:
            problems.append("n_samples must be at least 1")
        if self.togf_points < 2:
            problems.append("togf_points must be at least 2")
        if problems:
            raise ValueError("invalid scenario:\n  " + "\n  ".join(problems))


@dataclass
class Baseline:
    scuc: ScucResult
    dispatch: DispatchResult
    gas_profile: GasDemandProfile
    togf: TogfSolution
    controls: ControlSignal
    x0: np.ndarray
    trajectory: GasTrajectory
    base_cost: float

    @property
    def schedule(self) -> CommitmentSchedule:
        return self.scuc.schedule


@dataclass
class SampleResult:
    seed: int
    windows: list[ContingencyWindow]
    compressor: str                  # compressor with the longest outage; "" when none
    curtailed: list[tuple[str, int]]
    base_cost: float
    contingency_cost: float
    cost_increase_pct: float
    redispatch_delta: float
    shed_cost: float
    shed_mwh: float
    shed_pct: float
    curtailed_gas_kg: float
    detection_time: float | None
    violations: int = 0
    rounds: int = 0
    status: str = "ok"
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _primary_compressor(windows: list[ContingencyWindow]) -> str:
    if not windows:
        return ""
    tot: dict[str, float] = {}
    for w in windows:
        tot[w.compressor_id] = tot.get(w.compressor_id, 0.0) + w.duration
    return min(tot, key=lambda c: (-tot[c], c))


def togf_problem(config: ScenarioConfig, dispatch: DispatchResult,
                 schedule: CommitmentSchedule) -> tuple[GasDemandProfile, TogfProblem]:
    """Gas nominations implied by a dispatch and the compression problem that serves them."""
    net = config.network
    profile = gas_demand_from_dispatch(dispatch, schedule, config.fuel_map, config.system, config.ramp_minutes)
    T = float(config.horizon)
    slack = PiecewiseLinear.constant(net.slack_density, 0.0, T)
    prob = TogfProblem(net, profile.network_demand(net), slack, horizon=T, n_points=config.togf_points,
                       density_margin=config.togf_margin / net.scaling.rho0)
    return profile, prob


def run_baseline(config: ScenarioConfig, ip_options: IPOptions | None = None) -> Baseline:
    """Day-ahead commitment, dispatch, gas nominations, optimal compression and its verification."""
    sysm, net = config.system, config.network
    try:
        scuc = solve_scuc(sysm, config.load, gap_tol=config.gap_tol)
    except InfeasibleScuc as exc:
        raise StageError("scuc", str(exc)) from exc
    disp = solve_dcopf(sysm, scuc.schedule, config.load, voll=config.voll)
    if disp.status == "infeasible":
        raise StageError("dcopf", "baseline redispatch infeasible")
    if disp.shed_mwh > 1e-6:
        raise StageError("dcopf", f"baseline sheds {disp.shed_mwh:.3f} MWh")
    profile, prob = togf_problem(config, disp, scuc.schedule)
    T = float(config.horizon)
    try:
        togf = solve_togf(prob, ip_options)
    except ValueError as exc:
        raise StageError("togf", str(exc)) from exc
    if not togf.converged:
        raise StageError("togf", f"optimizer status {togf.status}")
    controls = togf.controls()
    x0 = togf.state(0).vector
    traj = integrate(net, x0, controls, T, rtol=config.rtol, atol=config.atol)
    viol = min_pressure_violations(traj, net)
    if viol:
        v = viol[0]
        raise StageError("tgf", f"baseline violates the minimum density at node {v.node_id} "
                                f"on [{v.t_start:.3f}, {v.t_end:.3f}] h")
    return Baseline(scuc, disp, profile, togf, controls, x0, traj, disp.objective)


def _zero_impact(seed, windows, det, baseline: Baseline, violations=0) -> SampleResult:
    return SampleResult(seed, windows, _primary_compressor(windows), [], baseline.base_cost, baseline.base_cost,
                        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, det, violations)


@dataclass
class SampleTrace:
    """Everything behind one sample, for inspection and export."""

    result: SampleResult
    attack_states: list[tuple[str, float]] = field(default_factory=list)
    gas: GasTrajectory | None = None
    gas_unmitigated: GasTrajectory | None = None
    dispatch: DispatchResult | None = None


def simulate_sample(config: ScenarioConfig, baseline: Baseline, seed: int,
                    windows: list[ContingencyWindow] | None = None) -> SampleTrace:
    """Full workflow for one seed; ``windows`` overrides the sampled outage windows."""
    T = float(config.horizon)
    traj = sample_trajectory(config.chain, T, seed)
    det = detection_time(traj, config.chain)
    if windows is None:
        windows = extract_contingencies(traj, config.chain)
    if not windows:
        return SampleTrace(_zero_impact(seed, windows, det, baseline), list(traj.visits))
    net = config.network
    u = apply_contingencies(baseline.controls, windows)
    gas = integrate(net, baseline.x0, u, T, rtol=config.rtol, atol=config.atol)
    first = gas
    viol = min_pressure_violations(gas, net)
    n_viol = len(viol)
    decision = CurtailmentDecision()
    profile = baseline.gas_profile
    rounds = 0
    while rounds < config.max_curtail_rounds:
        remaining = residual_violations(viol, decision)
        if not remaining:
            break
        new = curtailment_policy(remaining, config.fuel_map, baseline.dispatch, net, previous=decision,
                                 escalate=config.escalate, horizon=config.horizon)
        if new.curtailments == decision.curtailments:
            break
        decision = new
        rounds += 1
        profile = gas_demand_from_dispatch(baseline.dispatch, baseline.schedule, config.fuel_map,
                                           ramp_minutes=config.ramp_minutes, curtailed=decision.as_dict())
        gas = integrate(net, baseline.x0, u.replace(demand=profile.network_demand(net)), T,
                        rtol=config.rtol, atol=config.atol)
        viol = min_pressure_violations(gas, net)
    if not decision:
        res = _zero_impact(seed, windows, det, baseline, n_viol)
        return SampleTrace(res, list(traj.visits), gas, first)
    disp = solve_dcopf(config.system, baseline.schedule, config.load, curtailed=decision.as_dict(),
                       voll=config.voll, baseline=baseline.dispatch,
                       cap_gas_at_baseline=config.cap_gas_at_baseline, deploy_reserves=config.deploy_reserves)
    if disp.status == "infeasible":
        raise StageError("dcopf", f"redispatch infeasible for curtailment {decision.curtailments}")
    base = baseline.base_cost
    total_energy = float(config.load.sum())
    res = SampleResult(
        seed=seed,
        windows=windows,
        compressor=_primary_compressor(windows),
        curtailed=list(decision.curtailments),
        base_cost=base,
        contingency_cost=disp.objective,
        cost_increase_pct=100.0 * (disp.objective - base) / base if base else 0.0,
        redispatch_delta=disp.energy_cost - baseline.dispatch.energy_cost,
        shed_cost=disp.shed_cost,
        shed_mwh=disp.shed_mwh,
        shed_pct=100.0 * disp.shed_mwh / total_energy if total_energy else 0.0,
        curtailed_gas_kg=curtailed_gas_mass(baseline.gas_profile, profile),
        detection_time=det,
        violations=n_viol,
        rounds=rounds,
    )
    return SampleTrace(res, list(traj.visits), gas, first, disp)


def run_sample(config: ScenarioConfig, baseline: Baseline, seed: int) -> SampleResult:
    try:
        return simulate_sample(config, baseline, seed).result
    except Exception as exc:  # recorded, the study goes on
        log.warning("sample %d failed: %s", seed, exc)
        return SampleResult(seed, [], "", [], baseline.base_cost, math.nan, math.nan, math.nan, math.nan,
                            math.nan, math.nan, math.nan, None, status="failed", message=f"sample {seed}: {exc}")


# ---------------------------------------------------------------------------- Monte Carlo

_WORKER: dict = {}


def _init_worker(config, baseline):
    _WORKER["config"] = config
    _WORKER["baseline"] = baseline


def _work(seed):
    return run_sample(_WORKER["config"], _WORKER["baseline"], seed)


def run_monte_carlo(config: ScenarioConfig, n_samples: int | None = None, jobs: int = 1,
                    baseline: Baseline | None = None) -> tuple[list[SampleResult], "AggregateStats"]:
    n = config.n_samples if n_samples is None else n_samples
    if n < 1:
        raise ValueError("n_samples must be at least 1")
    if baseline is None:
        baseline = run_baseline(config)
    seeds = [config.seed + i for i in range(n)]
    if jobs <= 1:
        results = [run_sample(config, baseline, s) for s in seeds]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx, initializer=_init_worker,
                                 initargs=(config, baseline)) as ex:
            results = list(ex.map(_work, seeds, chunksize=max(1, n // (4 * jobs))))
    results.sort(key=lambda r: r.seed)
    return results, compute_stats(results)


@dataclass
class FiveNumber:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    count: int

    @classmethod
    def of(cls, values) -> "FiveNumber":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(math.nan, math.nan, math.nan, math.nan, math.nan, 0)
        q = np.percentile(v, [0, 25, 50, 75, 100])
        return cls(*(float(x) for x in q), int(v.size))


@dataclass
class AggregateStats:
    per_compressor: dict[str, FiveNumber]
    pooled: FiveNumber
    correlation: float | None          # None when either variable has zero variance
    shed_vs_cost: list[tuple[float, float]]
    shed_vs_gas: list[tuple[float, float]]
    gas_vs_cost: list[tuple[float, float]]
    n_samples: int
    n_failed: int
    n_with_contingency: int

    def to_json(self) -> dict:
        d = asdict(self)
        d["shed_vs_cost"] = [list(p) for p in self.shed_vs_cost]
        d["shed_vs_gas"] = [list(p) for p in self.shed_vs_gas]
        d["gas_vs_cost"] = [list(p) for p in self.gas_vs_cost]
        return d


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        return None
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def compute_stats(results: list[SampleResult], compressors: list[str] | None = None) -> AggregateStats:
    if not results:
        raise ValueError("no results")
    ok = [r for r in results if r.ok]
    comps = sorted(set(compressors or []) | {r.compressor for r in ok if r.compressor})
    per = {c: FiveNumber.of([r.cost_increase_pct for r in ok if r.compressor == c]) for c in comps}
    gas = [r.curtailed_gas_kg for r in ok]
    cost = [r.cost_increase_pct for r in ok]
    shed = [r.shed_mwh for r in ok]
    return AggregateStats(
        per_compressor=per,
        pooled=FiveNumber.of(cost),
        correlation=pearson(gas, cost),
        shed_vs_cost=list(zip(shed, cost)),
        shed_vs_gas=list(zip(shed, gas)),
        gas_vs_cost=list(zip(gas, cost)),
        n_samples=len(results),
        n_failed=len(results) - len(ok),
        n_with_contingency=sum(1 for r in ok if r.windows),
    )


# ---------------------------------------------------------------------------- output files

RESULT_COLUMNS = ["seed", "status", "compressor", "windows", "curtailed", "base_cost", "contingency_cost",
                  "cost_increase_pct", "redispatch_delta", "shed_cost", "shed_mwh", "shed_pct",
                  "curtailed_gas_kg", "detection_time", "violations", "rounds", "message"]


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_results_csv(results: list[SampleResult], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RESULT_COLUMNS)
        for r in results:
            wins = ";".join(f"{w.compressor_id}@{w.t_start!r}-{w.t_end!r}" for w in r.windows)
            cur = ";".join(f"{g}@{h}" for g, h in r.curtailed)
            wr.writerow([r.seed, r.status, r.compressor, wins, cur, _fmt(r.base_cost), _fmt(r.contingency_cost),
                         _fmt(r.cost_increase_pct), _fmt(r.redispatch_delta), _fmt(r.shed_cost),
                         _fmt(r.shed_mwh), _fmt(r.shed_pct), _fmt(r.curtailed_gas_kg), _fmt(r.detection_time),
                         r.violations, r.rounds, r.message])


def read_results_csv(path) -> list[SampleResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            wins = []
            for item in filter(None, row["windows"].split(";")):
                comp, span = item.rsplit("@", 1)
                a, b = span.split("-", 1)
                wins.append(ContingencyWindow(comp, float(a), float(b)))
            cur = []
            for item in filter(None, row["curtailed"].split(";")):
                g, h = item.rsplit("@", 1)
                cur.append((g, int(h)))
            f = lambda k: float(row[k])
            out.append(SampleResult(
                int(row["seed"]), wins, row["compressor"], cur, f("base_cost"), f("contingency_cost"),
                f("cost_increase_pct"), f("redispatch_delta"), f("shed_cost"), f("shed_mwh"), f("shed_pct"),
                f("curtailed_gas_kg"), float(row["detection_time"]) if row["detection_time"] else None,
                int(row["violations"]), int(row["rounds"]), row["status"], row["message"]))
    return out


def write_stats_json(stats: AggregateStats, path) -> None:
    with open(path, "w") as fh:
        json.dump(stats.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_plot_data(stats: AggregateStats, results: list[SampleResult], out_dir) -> list[str]:
    """Boxplot table and scatter table for cost increase against curtailed gas and shed."""
    os.makedirs(out_dir, exist_ok=True)
    box = os.path.join(out_dir, "boxplot.csv")
    with open(box, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["compressor", "count", "min", "q1", "median", "q3", "max"])
        for c, f in stats.per_compressor.items():
            wr.writerow([c, f.count, _fmt(f.min), _fmt(f.q1), _fmt(f.median), _fmt(f.q3), _fmt(f.max)])
    sc = os.path.join(out_dir, "scatter.csv")
    with open(sc, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["seed", "compressor", "curtailed_gas_kg", "cost_increase_pct", "shed_mwh"])
        for r in results:
            if r.ok:
                wr.writerow([r.seed, r.compressor, _fmt(r.curtailed_gas_kg), _fmt(r.cost_increase_pct),
                             _fmt(r.shed_mwh)])
    return [box, sc]


def write_trace(trace: SampleTrace, network: GasNetwork, out_dir) -> list[str]:
    """Pressure and ratio time series of one sample plus the attacker path."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    p = os.path.join(out_dir, "attack_path.csv")
    with open(p, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["state", "enter_h"])
        for s, t in trace.attack_states:
            wr.writerow([s, _fmt(t)])
    files.append(p)
    for tag, gas in (("gas_unmitigated", trace.gas_unmitigated), ("gas", trace.gas)):
        if gas is None:
            continue
        p = os.path.join(out_dir, f"{tag}.csv")
        pres = network.pressure_pa(gas.rho)
        with open(p, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["time_h"] + [f"p_{n}_pa" for n in network.node_ids]
                        + [f"alpha_{c}" for c in network.compressor_ids])
            for k, t in enumerate(gas.times):
                wr.writerow([_fmt(t)] + [_fmt(x) for x in pres[k]] + [_fmt(x) for x in gas.alpha[k]])
        files.append(p)
    p = os.path.join(out_dir, "sample.json")
    r = trace.result
    d = asdict(r)
    d["windows"] = [asdict(w) for w in r.windows]
    with open(p, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(p)
    return files
