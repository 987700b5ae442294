"""Gas-for-power coupling: fuel use of gas-fired units and curtailment decisions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .gas_network import GasNetwork
from .gas_transient import PiecewiseLinear, PressureViolation
from .power_market import CommitmentSchedule, DispatchResult, PowerSystem

log = logging.getLogger(__name__)

DEFAULT_BETA = 0.0075        # kg/s per MMBTU/h
DEFAULT_RAMP_MIN = 5.0
RECOVERY_GRACE_H = 1.0

# (a, b, c) of heat = a P^2 + b P + c, MMBTU/h against MW
HEAT_CLASSES = {
    "CT": (4.46, -9.95, 15.11),
    "ST": (1.7, -3.87, 12.0),
    "CC": (5.8, -11.2, 12.87),
}


@dataclass(frozen=True)
class FuelEntry:
    generator: str
    node: str
    turbine_class: str
    a: float
    b: float
    c: float

    def heat(self, p):
        p = np.asarray(p, dtype=float)
        return self.a * p ** 2 + self.b * p + self.c


@dataclass
class FuelMap:
    entries: list[FuelEntry]
    beta: float = DEFAULT_BETA
    unmapped: str = "warn"   # warn | fail

    def __post_init__(self):
        gens = [e.generator for e in self.entries]
        if len(set(gens)) != len(gens):
            raise ValueError("a generator appears twice in the fuel map")
        for e in self.entries:
            if e.a < 0:
                raise ValueError(f"fuel map entry {e.generator}: quadratic coefficient must be nonnegative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.unmapped not in ("warn", "fail"):
            raise ValueError("unmapped must be 'warn' or 'fail'")

    @classmethod
    def from_classes(cls, rows, beta: float = DEFAULT_BETA, classes=None, **kw) -> "FuelMap":
        """``rows`` are ``(generator, node, class)``; coefficients come from the class table."""
        table = dict(HEAT_CLASSES if classes is None else classes)
        out = []
        for gen, node, klass in rows:
            if klass not in table:
                raise ValueError(f"unknown turbine class {klass!r} for generator {gen}")
            a, b, c = table[klass]
            out.append(FuelEntry(str(gen), str(node), klass, a, b, c))
        return cls(out, beta, **kw)

    @property
    def generators(self) -> list[str]:
        return [e.generator for e in self.entries]

    @property
    def nodes(self) -> list[str]:
        return sorted(set(e.node for e in self.entries))

    def at_node(self, node: str) -> list[str]:
        return sorted(e.generator for e in self.entries if e.node == node)

    def entry(self, gen: str) -> FuelEntry:
        for e in self.entries:
            if e.generator == gen:
                return e
        raise KeyError(gen)

    def check(self, system: PowerSystem, network: GasNetwork) -> list[str]:
        problems = []
        gids = set(system.gen_ids)
        for e in self.entries:
            if e.generator not in gids:
                problems.append(f"generator {e.generator} is not in the power system")
            if e.node not in network.node_ids:
                problems.append(f"gas node {e.node} is not in the gas network")
            elif e.node in [network.node_ids[i] for i in network.slack_idx]:
                problems.append(f"gas node {e.node} is a slack node and cannot carry a withdrawal")
        return problems


@dataclass
class GasDemandProfile:
    """Hourly gas-for-power withdrawals (kg/s) per node, smoothed at hour boundaries."""

    node_ids: list[str]
    hourly: np.ndarray     # (N, nodes)
    ramp_h: float = DEFAULT_RAMP_MIN / 60.0

    @property
    def horizon(self) -> int:
        return self.hourly.shape[0]

    def piecewise(self) -> PiecewiseLinear:
        N = self.horizon
        half = 0.5 * self.ramp_h
        times = [0.0]
        vals = [self.hourly[0]]
        for k in range(1, N):
            if half > 0:
                times += [k - half, k + half]
                vals += [self.hourly[k - 1], self.hourly[k]]
            else:
                times += [float(k), float(k)]
                vals += [self.hourly[k - 1], self.hourly[k]]
        times.append(float(N))
        vals.append(self.hourly[-1])
        return PiecewiseLinear(times, np.array(vals))

    def total_mass(self) -> float:
        """Integral of all withdrawals over the horizon, kg."""
        pl = self.piecewise()
        return float(np.sum(pl.integral(0.0, float(self.horizon)))) * 3600.0

    def network_demand(self, network: GasNetwork) -> PiecewiseLinear:
        """Nondimensional withdrawal per demand node, base offtake included."""
        pl = self.piecewise()
        cols = []
        pos = {network.node_ids[i]: k for k, i in enumerate(network.demand_idx)}
        M = np.zeros((len(self.node_ids), network.n_demand))
        for j, nid in enumerate(self.node_ids):
            if nid not in pos:
                raise KeyError(f"gas node {nid} is not a demand node")
            M[j, pos[nid]] = 1.0 / network.scaling.mass_flow
        base = network.base_withdrawal[network.demand_idx]
        return PiecewiseLinear(pl.times, pl.values @ M + base)


def generator_fuel(dispatch: DispatchResult, schedule: CommitmentSchedule, fmap: FuelMap) -> dict[str, np.ndarray]:
    """Per mapped generator hourly withdrawal in kg/s; zero while decommitted."""
    out = {}
    for e in fmap.entries:
        if e.generator not in dispatch.gen_ids:
            raise KeyError(f"mapped generator {e.generator} missing from dispatch")
        g = dispatch.gen_ids.index(e.generator)
        u = schedule.u[schedule.gen_ids.index(e.generator)]
        P = dispatch.P[g]
        out[e.generator] = np.where(u > 0.5, fmap.beta * e.heat(P), 0.0)
    return out


def gas_demand_from_dispatch(dispatch: DispatchResult, schedule: CommitmentSchedule, fmap: FuelMap,
                             system: PowerSystem | None = None, ramp_minutes: float = DEFAULT_RAMP_MIN,
                             curtailed: dict[str, int] | None = None) -> GasDemandProfile:
    """Nodal gas withdrawals implied by a dispatch.

    ``curtailed`` maps generator id to the hour from which its fuel is cut.
    """
    if system is not None:
        mapped = set(fmap.generators)
        for g, gen in enumerate(system.generators):
            if gen.fuel == "gas" and gen.id not in mapped and np.any(dispatch.P[g] > 1e-9):
                msg = f"gas-fired generator {gen.id} has output but no fuel map entry"
                if fmap.unmapped == "fail":
                    raise ValueError(msg)
                log.warning(msg)
    fuel = generator_fuel(dispatch, schedule, fmap)
    N = dispatch.P.shape[1]
    nodes = fmap.nodes
    hourly = np.zeros((N, len(nodes)))
    for e in fmap.entries:
        f = fuel[e.generator].copy()
        if curtailed and e.generator in curtailed:
            f[int(curtailed[e.generator]):] = 0.0
        hourly[:, nodes.index(e.node)] += f
    return GasDemandProfile(nodes, hourly, ramp_minutes / 60.0)


@dataclass
class CurtailmentDecision:
    curtailments: list[tuple[str, int]] = field(default_factory=list)   # (generator, from hour)
    rationale: list[tuple[str, float]] = field(default_factory=list)    # (node, worst density)

    def as_dict(self) -> dict[str, int]:
        return dict(self.curtailments)

    @property
    def generators(self) -> list[str]:
        return [g for g, _ in self.curtailments]

    def __bool__(self):
        return bool(self.curtailments)


def onset_hour(t: float) -> int:
    """First whole hour strictly after ``t``."""
    return int(math.floor(t + 1e-9)) + 1


def residual_violations(violations: list[PressureViolation], decision: CurtailmentDecision,
                        grace_h: float = RECOVERY_GRACE_H) -> list[PressureViolation]:
    """Violations that persist past the recovery allowance after the earliest curtailment."""
    if not decision:
        return list(violations)
    start = min(h for _, h in decision.curtailments) + grace_h
    return [v for v in violations if v.t_end > start + 1e-9]


def curtailment_policy(violations: list[PressureViolation], fmap: FuelMap, dispatch: DispatchResult,
                       network: GasNetwork | None = None, previous: CurtailmentDecision | None = None,
                       escalate: bool = True, horizon: int | None = None,
                       grace_h: float = RECOVERY_GRACE_H) -> CurtailmentDecision:
    """Extend ``previous`` with whole-generator curtailments for the given violations.

    Units at violating nodes go first; when none are left, units at nodes
    downstream of the violating nodes are added.  The returned decision equals
    ``previous`` when nothing more can be curtailed.
    """
    prev = previous or CurtailmentDecision()
    dec = CurtailmentDecision(list(prev.curtailments), list(prev.rationale))
    if not violations:
        return dec
    N = horizon if horizon is not None else dispatch.P.shape[1]
    done = set(dec.generators)
    floor_t = (min(h for _, h in prev.curtailments) + grace_h) if prev else -math.inf

    def producing(gid):
        g = dispatch.gen_ids.index(gid)
        return bool(np.any(dispatch.P[g] > 1e-9))

    viol = sorted(violations, key=lambda v: (v.node_id, v.t_start))
    onset = min(max(v.t_start, floor_t) for v in viol)
    hour = min(onset_hour(onset), N)
    bad_nodes = sorted(set(v.node_id for v in viol))
    worst = {}
    for v in viol:
        worst[v.node_id] = min(worst.get(v.node_id, math.inf), v.worst_density)

    added = []
    for node in bad_nodes:
        for gid in fmap.at_node(node):
            if gid not in done and producing(gid):
                added.append(gid)
    if not added and escalate and network is not None:
        down = sorted(set(n for node in bad_nodes for n in network.downstream_nodes(node)))
        for node in down:
            for gid in fmap.at_node(node):
                if gid not in done and gid not in added and producing(gid):
                    added.append(gid)
    if not added:
        if not prev:
            log.warning("pressure violations at %s but no curtailable gas-fired units", ", ".join(bad_nodes))
        return dec
    for gid in added:
        dec.curtailments.append((gid, hour))
    for node in bad_nodes:
        dec.rationale.append((node, worst[node]))
    return dec


def curtailed_gas_mass(baseline: GasDemandProfile, after: GasDemandProfile) -> float:
    """``integral (baseline - after)`` over the horizon, kg."""
    if baseline.node_ids != after.node_ids:
        raise ValueError("profiles cover different nodes")
    N = float(baseline.horizon)
    diff = baseline.piecewise().integral(0.0, N) - after.piecewise().integral(0.0, N)
    return float(np.sum(diff)) * 3600.0
