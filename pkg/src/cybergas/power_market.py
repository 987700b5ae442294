"""Day-ahead unit commitment and real-time redispatch on a PTDF network model.

Unit commitment uses a three-variable formulation (commitment ``u``, start-up
``v``, shut-down ``w``) with ``v, w`` continuous in ``[0, 1]``; only ``u`` is
branched on.  Every hour must carry enough reserve to cover 7 % of the load
and the loss of any single unit including its own reserve.
"""
from __future__ import annotations

import csv
import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, LPResult

log = logging.getLogger(__name__)

RESERVE_LOAD_FRACTION = 0.07
DEFAULT_VOLL = 10_000.0
INT_TOL = 1e-6

FAMILIES = ("flow_limits", "generator_limits", "power_balance", "ramp_up", "ramp_down", "min_up",
            "min_down", "commitment_logic", "reserve_load_share", "reserve_single_outage", "reserve_capacity")


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float   # p.u.
    p_min: float         # MW
    p_max: float         # MW


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    cost: float                 # $/MWh
    no_load_cost: float = 0.0   # $/h
    startup_cost: float = 0.0   # $
    shutdown_cost: float = 0.0  # $
    reserve_cost: float = 0.0   # $/MW-h
    p_min: float = 0.0
    p_max: float = 0.0
    ramp_hr: float = math.inf
    ramp_su: float = math.inf
    ramp_sd: float = math.inf
    min_up: int = 1
    min_down: int = 1
    reserve_cap: float = math.inf
    fuel: str = "other"
    initial_on: bool = False
    initial_p: float = 0.0


@dataclass
class PowerSystem:
    buses: list[str]
    branches: list[Branch]
    generators: list[Generator]
    ref_bus: str

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ValueError("invalid power system:\n  " + "\n  ".join(problems))

    def validate(self) -> list[str]:
        out = []
        if len(set(self.buses)) != len(self.buses):
            out.append("duplicate bus ids")
        bs = set(self.buses)
        if self.ref_bus not in bs:
            out.append(f"reference bus {self.ref_bus!r} is not a bus")
        ids = [b.id for b in self.branches]
        if len(set(ids)) != len(ids):
            out.append("duplicate branch ids")
        for b in self.branches:
            if b.from_bus not in bs or b.to_bus not in bs:
                out.append(f"branch {b.id}: unknown endpoint")
            if b.from_bus == b.to_bus:
                out.append(f"branch {b.id}: self loop")
            if not b.susceptance > 0:
                out.append(f"branch {b.id}: susceptance must be positive")
            if b.p_min > b.p_max:
                out.append(f"branch {b.id}: p_min above p_max")
        gids = [g.id for g in self.generators]
        if len(set(gids)) != len(gids):
            out.append("duplicate generator ids")
        for g in self.generators:
            if g.bus not in bs:
                out.append(f"generator {g.id}: unknown bus {g.bus!r}")
            if not 0 <= g.p_min <= g.p_max:
                out.append(f"generator {g.id}: limits need 0 <= p_min <= p_max")
            if min(g.ramp_hr, g.ramp_su, g.ramp_sd) < 0:
                out.append(f"generator {g.id}: negative ramp rate")
            if g.min_up < 1 or g.min_down < 1:
                out.append(f"generator {g.id}: minimum up/down times must be at least 1 h")
            if g.reserve_cap < 0:
                out.append(f"generator {g.id}: negative reserve capability")
        # connectivity
        adj = {b: set() for b in self.buses}
        for br in self.branches:
            if br.from_bus in adj and br.to_bus in adj:
                adj[br.from_bus].add(br.to_bus)
                adj[br.to_bus].add(br.from_bus)
        if self.buses:
            seen = {self.buses[0]}
            stack = [self.buses[0]]
            while stack:
                for j in adj[stack.pop()]:
                    if j not in seen:
                        seen.add(j)
                        stack.append(j)
            if len(seen) != len(self.buses):
                out.append("network is not connected")
        return out

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_gens(self) -> int:
        return len(self.generators)

    @property
    def gen_ids(self) -> list[str]:
        return [g.id for g in self.generators]

    def gen_index(self, gid: str) -> int:
        return self.gen_ids.index(gid)

    def gen_bus_index(self) -> np.ndarray:
        pos = {b: i for i, b in enumerate(self.buses)}
        return np.array([pos[g.bus] for g in self.generators], dtype=int)

    def arr(self, name: str) -> np.ndarray:
        return np.array([getattr(g, name) for g in self.generators], dtype=float)


@dataclass
class PtdfMatrix:
    matrix: np.ndarray     # (branches, buses), zero reference column
    bus_ids: list[str]
    branch_ids: list[str]
    ref_bus: str


def compute_ptdf(system: PowerSystem, ref_bus: str | None = None) -> PtdfMatrix:
    """``H B'^-1`` padded with a zero column at the reference bus."""
    ref = system.ref_bus if ref_bus is None else ref_bus
    pos = {b: i for i, b in enumerate(system.buses)}
    if ref not in pos:
        raise ValueError(f"unknown reference bus {ref!r}")
    L, N = len(system.branches), system.n_buses
    A = np.zeros((L, N))
    b = np.zeros(L)
    for k, br in enumerate(system.branches):
        A[k, pos[br.from_bus]] = 1.0
        A[k, pos[br.to_bus]] = -1.0
        b[k] = br.susceptance
    keep = [i for i in range(N) if i != pos[ref]]
    Ar = A[:, keep]
    H = b[:, None] * Ar
    Bp = Ar.T @ H
    if N > 1 and np.linalg.matrix_rank(Bp) < N - 1:
        raise ValueError("reduced susceptance matrix is singular (islanded system)")
    M = np.zeros((L, N))
    if N > 1:
        M[:, keep] = np.linalg.solve(Bp.T, H.T).T
    return PtdfMatrix(M, list(system.buses), [br.id for br in system.branches], ref)


@dataclass
class CommitmentSchedule:
    gen_ids: list[str]
    u: np.ndarray   # (G, N) 0/1
    v: np.ndarray
    w: np.ndarray
    r: np.ndarray   # MW

    @property
    def horizon(self) -> int:
        return self.u.shape[1]


@dataclass
class DispatchResult:
    gen_ids: list[str]
    P: np.ndarray          # (G, N) MW
    flows: np.ndarray      # (L, N) MW
    shed: np.ndarray       # (B, N) MW
    objective: float       # objective of the problem that produced it
    energy_cost: float     # sum c_g P_gt
    shed_cost: float
    status: str            # optimal | degraded | infeasible

    @property
    def shed_mwh(self) -> float:
        return float(self.shed.sum())


@dataclass
class ScucResult:
    schedule: CommitmentSchedule
    dispatch: DispatchResult
    cost: float
    bound: float
    gap: float
    nodes: int
    seconds: float

    def __iter__(self):
        yield self.schedule
        yield self.dispatch


class InfeasibleScuc(RuntimeError):
    def __init__(self, certificate: dict):
        self.certificate = certificate
        fams = ", ".join(f"{k} ({v:.4g})" for k, v in certificate.items())
        super().__init__(f"unit commitment infeasible; violated constraint families: {fams}")


def _finite(x, cap):
    x = np.asarray(x, dtype=float)
    return np.where(np.isfinite(x), x, cap)


def _screen_lines(ptdf, gb, pmax, load, p_lo, p_hi):
    """Keep (line, hour) flow rows that can bind for some dispatch in ``[0, pmax]``."""
    coef = ptdf[:, gb]                       # (L, G)
    hi_g = np.clip(coef, 0, None) @ pmax
    lo_g = np.clip(coef, None, 0) @ pmax
    fd = ptdf @ load.T                       # (L, N)
    fmax = hi_g[:, None] - fd
    fmin = lo_g[:, None] - fd
    return (fmax > p_hi[:, None] - 1e-9) | (fmin < p_lo[:, None] + 1e-9)


class _ScucModel:
    def __init__(self, system: PowerSystem, load: np.ndarray, reserves: bool = True):
        self.sys = system
        load = np.asarray(load, dtype=float)
        if load.ndim != 2 or load.shape[1] != system.n_buses:
            raise ValueError("load must be an (hours, buses) array")
        self.load = load
        G, N = system.n_gens, load.shape[0]
        self.G, self.N = G, N
        pmax = system.arr("p_max")
        pmin = system.arr("p_min")
        Rhr = _finite(system.arr("ramp_hr"), pmax)
        Rsu = _finite(system.arr("ramp_su"), pmax)
        Rsd = _finite(system.arr("ramp_sd"), pmax)
        Rcap = _finite(system.arr("reserve_cap"), pmax)
        u0 = np.array([1.0 if g.initial_on else 0.0 for g in system.generators])
        p0 = system.arr("initial_p")
        lp = LinearProgram()
        self.lp = lp
        P = lp.add_variables((G, N), 0.0, np.repeat(pmax[:, None], N, 1), np.repeat(system.arr("cost")[:, None], N, 1))
        u = lp.add_variables((G, N), 0.0, 1.0, np.repeat(system.arr("no_load_cost")[:, None], N, 1))
        v = lp.add_variables((G, N), 0.0, 1.0, np.repeat(system.arr("startup_cost")[:, None], N, 1))
        w = lp.add_variables((G, N), 0.0, 1.0, np.repeat(system.arr("shutdown_cost")[:, None], N, 1))
        rub = np.repeat(Rcap[:, None], N, 1) if reserves else 0.0
        r = lp.add_variables((G, N), 0.0, rub, np.repeat(system.arr("reserve_cost")[:, None], N, 1))
        self.P, self.u, self.v, self.w, self.r = P, u, v, w, r
        GN = G * N
        k = np.arange(GN)
        Pf, uf, vf, wf, rf = P.ravel(), u.ravel(), v.ravel(), w.ravel(), r.ravel()
        rep = lambda a: np.repeat(a, N)
        # generator limits with reserve on both sides
        lp.add_rows(np.r_[k, k, k], np.r_[Pf, uf, rf], np.r_[np.ones(GN), -rep(pmin), -np.ones(GN)],
                    0.0, np.inf, "generator_limits", GN)
        lp.add_rows(np.r_[k, k, k], np.r_[Pf, uf, rf], np.r_[np.ones(GN), -rep(pmax), np.ones(GN)],
                    -np.inf, 0.0, "generator_limits", GN)
        # balance
        dem = load.sum(axis=1)
        t_idx = np.tile(np.arange(N), G)
        lp.add_rows(t_idx, Pf, np.ones(GN), dem, dem, "power_balance", N)
        # flows
        ptdf = compute_ptdf(system)
        self.ptdf = ptdf
        gb = system.gen_bus_index()
        if system.branches:
            p_lo = np.array([b.p_min for b in system.branches])
            p_hi = np.array([b.p_max for b in system.branches])
            keep = _screen_lines(ptdf.matrix, gb, pmax, load, p_lo, p_hi)
            fd = ptdf.matrix @ load.T
            rows, cols, vals, lo, hi = [], [], [], [], []
            n_rows = 0
            for l, t in zip(*np.nonzero(keep)):
                coef = ptdf.matrix[l, gb]
                nz = np.flatnonzero(np.abs(coef) > 1e-12)
                rows.append(np.full(len(nz), n_rows))
                cols.append(P[nz, t])
                vals.append(coef[nz])
                lo.append(p_lo[l] + fd[l, t])
                hi.append(p_hi[l] + fd[l, t])
                n_rows += 1
            if n_rows:
                lp.add_rows(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                            np.array(lo), np.array(hi), "flow_limits", n_rows)
            self.n_flow_rows = n_rows
        else:
            self.n_flow_rows = 0
        # ramping
        for g in range(G):
            for t in range(N):
                if t == 0:
                    lp.add_row([P[g, 0], v[g, 0]], [1.0, -Rsu[g]], -np.inf, p0[g] + Rhr[g] * u0[g], "ramp_up")
                    lp.add_row([P[g, 0], u[g, 0], w[g, 0]], [-1.0, -Rhr[g], -Rsd[g]], -np.inf, -p0[g], "ramp_down")
                else:
                    lp.add_row([P[g, t], P[g, t - 1], u[g, t - 1], v[g, t]], [1.0, -1.0, -Rhr[g], -Rsu[g]],
                               -np.inf, 0.0, "ramp_up")
                    lp.add_row([P[g, t - 1], P[g, t], u[g, t], w[g, t]], [1.0, -1.0, -Rhr[g], -Rsd[g]],
                               -np.inf, 0.0, "ramp_down")
        # minimum up / down times
        for g, gen in enumerate(system.generators):
            for t in range(gen.min_up - 1, N):
                s = list(range(t - gen.min_up + 1, t + 1))
                lp.add_row(list(v[g, s]) + [u[g, t]], [1.0] * len(s) + [-1.0], -np.inf, 0.0, "min_up")
            for t in range(gen.min_down - 1, N):
                s = list(range(t - gen.min_down + 1, t + 1))
                lp.add_row(list(w[g, s]) + [u[g, t]], [1.0] * len(s) + [1.0], -np.inf, 1.0, "min_down")
        # commitment logic
        for g in range(G):
            for t in range(N):
                if t == 0:
                    lp.add_row([v[g, 0], w[g, 0], u[g, 0]], [1.0, -1.0, -1.0], -u0[g], -u0[g], "commitment_logic")
                else:
                    lp.add_row([v[g, t], w[g, t], u[g, t], u[g, t - 1]], [1.0, -1.0, -1.0, 1.0], 0.0, 0.0,
                               "commitment_logic")
        if reserves:
            lp.add_rows(t_idx, rf, np.ones(GN), RESERVE_LOAD_FRACTION * dem, np.inf, "reserve_load_share", N)
            rows, cols, vals = [], [], []
            n_rows = 0
            for t in range(N):
                for g in range(G):
                    c = list(r[:, t]) + [P[g, t]]
                    vv = [1.0] * G + [-1.0]
                    vv[g] = 0.0   # own reserve appears on both sides
                    rows.append(np.full(G + 1, n_rows))
                    cols.append(np.array(c))
                    vals.append(np.array(vv))
                    n_rows += 1
            lp.add_rows(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), 0.0, np.inf,
                        "reserve_single_outage", n_rows)
            lp.add_rows(np.r_[k, k], np.r_[rf, uf], np.r_[np.ones(GN), -rep(Rcap)], -np.inf, 0.0,
                        "reserve_capacity", GN)
        self.lb0 = np.array(lp.lb)
        self.ub0 = np.array(lp.ub)

    def solve(self, u_lo, u_hi) -> LPResult:
        lb = self.lb0.copy()
        ub = self.ub0.copy()
        lb[self.u.ravel()] = u_lo.ravel()
        ub[self.u.ravel()] = u_hi.ravel()
        return self.lp.solve(lb=lb, ub=ub)

    def certificate(self, integer: bool = False) -> dict:
        """Constraint families whose violations an elastic model needs to regain feasibility.

        With ``integer`` the commitments stay binary in the elastic models, which
        is needed when only the LP relaxation is feasible.
        """
        out = {}
        lp = self.lp

        def integ(el):
            if not integer:
                return None
            z = np.zeros(el.n_vars)
            z[self.u.ravel()] = 1
            return z

        for fam in lp.families():
            el, _ = lp.elastic([fam])
            res = el.solve(integrality=integ(el))
            if res.ok:
                out[fam] = res.objective
        if not out:
            el, sl = lp.elastic(lp.families())
            res = el.solve(integrality=integ(el))
            if res.ok:
                fam_of = np.array(lp.row_family + lp.row_family)
                viol = res.x[sl]
                for fam in lp.families():
                    tot = float(viol[fam_of == fam].sum())
                    if tot > 1e-9:
                        out[fam] = tot
        if not out:
            out["variable_bounds"] = math.inf
        return dict(sorted(out.items(), key=lambda kv: -kv[1]))


def _schedule_from(model: _ScucModel, x) -> CommitmentSchedule:
    u = np.round(x[model.u]).clip(0, 1) + 0.0   # no negative zeros
    G, N = u.shape
    u0 = np.array([1.0 if g.initial_on else 0.0 for g in model.sys.generators])
    prev = np.concatenate([u0[:, None], u[:, :-1]], axis=1)
    d = u - prev
    return CommitmentSchedule(model.sys.gen_ids, u, np.maximum(d, 0.0), np.maximum(-d, 0.0),
                              np.clip(x[model.r], 0.0, None))


def _dispatch_from(model: _ScucModel, x, objective) -> DispatchResult:
    sysm = model.sys
    P = np.clip(x[model.P], 0.0, None)
    gb = sysm.gen_bus_index()
    inj = np.zeros((sysm.n_buses, model.N))
    np.add.at(inj, gb, P)
    flows = model.ptdf.matrix @ (inj - model.load.T)
    cost = float(np.sum(sysm.arr("cost")[:, None] * P))
    return DispatchResult(sysm.gen_ids, P, flows, np.zeros((sysm.n_buses, model.N)), float(objective), cost, 0.0,
                          "optimal")


def solve_scuc(system: PowerSystem, load, gap_tol: float = 1e-4, max_nodes: int = 20000,
               time_limit: float | None = None, reserves: bool = True) -> ScucResult:
    """Best-first branch and bound over commitment variables with LP relaxations."""
    t0 = time.perf_counter()
    model = _ScucModel(system, load, reserves=reserves)
    G, N = model.G, model.N
    cap = system.arr("p_max").sum()
    peak = np.asarray(load).sum(axis=1).max()
    if cap < peak * (1 + (RESERVE_LOAD_FRACTION if reserves else 0.0)) - 1e-9:
        raise InfeasibleScuc({"generator_limits": float(peak - cap), "reserve_load_share": float(
            peak * (1 + RESERVE_LOAD_FRACTION) - cap)} if reserves else {"generator_limits": float(peak - cap)})
    lo = np.zeros((G, N))
    hi = np.ones((G, N))
    root = model.solve(lo, hi)
    if not root.ok:
        raise InfeasibleScuc(model.certificate())

    incumbent = None
    inc_cost = math.inf

    def try_fix(ufix):
        nonlocal incumbent, inc_cost
        res = model.solve(ufix, ufix)
        if res.ok and res.objective < inc_cost - 1e-9:
            incumbent, inc_cost = res.x.copy(), res.objective
            return True
        return False

    def frac_of(x):
        uu = x[model.u]
        return np.abs(uu - np.round(uu))

    def heuristics(x):
        uu = x[model.u]
        try_fix(np.ceil(uu - INT_TOL))
        try_fix((uu >= 0.5).astype(float))

    def pick(x):
        f = frac_of(x)
        if f.max() <= INT_TOL:
            return None
        # most fractional; ties by generator index then hour
        score = np.abs(x[model.u] - 0.5)
        best = score.min()
        cand = np.argwhere(np.abs(score - best) <= 1e-12)
        g, t = min(map(tuple, cand))
        return int(g), int(t)

    counter = 0
    heap = [(root.objective, counter, lo, hi, root)]
    nodes = 0
    best_bound = root.objective
    if pick(root.x) is None:
        incumbent, inc_cost = root.x.copy(), root.objective
    else:
        heuristics(root.x)

    def gap_of(bound):
        if not math.isfinite(inc_cost):
            return math.inf
        return max(0.0, (inc_cost - bound) / max(abs(inc_cost), 1e-9))

    while heap:
        bound, _, nlo, nhi, res = heapq.heappop(heap)
        best_bound = bound
        if gap_of(bound) <= gap_tol:
            break
        if nodes >= max_nodes or (time_limit is not None and time.perf_counter() - t0 > time_limit):
            log.warning("branch and bound stopped at node limit with gap %.3g", gap_of(bound))
            break
        nodes += 1
        br = pick(res.x)
        if br is None:
            continue
        g, t = br
        for val in (0.0, 1.0):
            clo, chi = nlo.copy(), nhi.copy()
            clo[g, t] = chi[g, t] = val
            cres = model.solve(clo, chi)
            if not cres.ok:
                continue
            if cres.objective >= inc_cost - max(gap_tol * abs(inc_cost), 1e-9):
                continue
            if pick(cres.x) is None:
                incumbent, inc_cost = cres.x.copy(), cres.objective
                continue
            if nodes % 10 == 1:
                heuristics(cres.x)
            counter += 1
            heapq.heappush(heap, (cres.objective, counter, clo, chi, cres))
    else:
        best_bound = inc_cost if incumbent is not None else best_bound
    if incumbent is None:
        raise InfeasibleScuc(model.certificate(integer=True))
    if heap:
        best_bound = min(best_bound, heap[0][0])
    # polish with commitments fixed and clean start/stop indicators
    ufix = np.round(incumbent[model.u])
    fin = model.solve(ufix, ufix)
    x = fin.x if fin.ok else incumbent
    sched = _schedule_from(model, x)
    vv, ww = sched.v, sched.w
    obj = float(np.dot(model.lp.cost, _with_vw(model, x, vv, ww)))
    disp = _dispatch_from(model, x, obj)
    return ScucResult(sched, disp, obj, float(min(best_bound, obj)), gap_of(best_bound) if heap else 0.0,
                      nodes, time.perf_counter() - t0)


def _with_vw(model, x, v, w):
    z = np.array(x, dtype=float)
    z[model.v] = v
    z[model.w] = w
    z[model.u] = np.round(z[model.u])
    return z


def schedule_cost(system: PowerSystem, schedule: CommitmentSchedule, P) -> float:
    c = (system.arr("cost")[:, None] * P + system.arr("no_load_cost")[:, None] * schedule.u
         + system.arr("startup_cost")[:, None] * schedule.v + system.arr("shutdown_cost")[:, None] * schedule.w
         + system.arr("reserve_cost")[:, None] * schedule.r)
    return float(c.sum())


# ---------------------------------------------------------------------------- real-time redispatch

def solve_dcopf(system: PowerSystem, schedule: CommitmentSchedule, load, curtailed=None,
                voll: float = DEFAULT_VOLL, baseline: DispatchResult | None = None,
                cap_gas_at_baseline: bool = True, deploy_reserves: bool = False) -> DispatchResult:
    """Whole-day energy-cost redispatch with commitments and reserves fixed.

    ``curtailed`` maps generator id to the first hour (0-based) from which the
    unit produces nothing.  With a ``baseline`` dispatch, hours before the
    earliest curtailment are held at baseline values and gas-fired units that
    keep running may not exceed their baseline (nominated) output.
    """
    load = np.asarray(load, dtype=float)
    G, N = system.n_gens, load.shape[0]
    B = system.n_buses
    curtailed = dict(curtailed or {})
    for gid in curtailed:
        if gid not in system.gen_ids:
            raise KeyError(f"unknown generator {gid!r}")
    cut_from = np.full(G, N)
    for gid, h in curtailed.items():
        cut_from[system.gen_index(gid)] = max(0, min(N, int(h)))
    first_cut = int(cut_from.min()) if curtailed else N

    u, v, w, r = schedule.u, schedule.v, schedule.w, (np.zeros_like(schedule.r) if deploy_reserves else schedule.r)
    pmax = system.arr("p_max")
    pmin = system.arr("p_min")
    Rhr = _finite(system.arr("ramp_hr"), pmax)
    Rsu = _finite(system.arr("ramp_su"), pmax)
    Rsd = _finite(system.arr("ramp_sd"), pmax)
    u0 = np.array([1.0 if g.initial_on else 0.0 for g in system.generators])
    p0 = system.arr("initial_p")
    cut = np.arange(N)[None, :] >= cut_from[:, None]

    lo = pmin[:, None] * u + r
    hi = pmax[:, None] * u - r
    lo = np.where(cut, 0.0, lo)
    hi = np.where(cut, 0.0, hi)
    if baseline is not None:
        if cap_gas_at_baseline:
            gas = np.array([g.fuel == "gas" for g in system.generators])
            hi = np.where(gas[:, None] & ~cut, np.minimum(hi, baseline.P), hi)
            lo = np.minimum(lo, hi)
        if first_cut > 0 and curtailed:
            lo[:, :first_cut] = baseline.P[:, :first_cut]
            hi[:, :first_cut] = baseline.P[:, :first_cut]
    lo = np.minimum(lo, hi)

    lp = LinearProgram()
    P = lp.add_variables((G, N), lo, hi, np.repeat(system.arr("cost")[:, None], N, 1))
    shed_ub = load.T.copy()
    if baseline is not None and curtailed and first_cut > 0:
        shed_ub[:, :first_cut] = baseline.shed[:, :first_cut]
    S = lp.add_variables((B, N), 0.0, shed_ub, voll)
    dem = load.sum(axis=1)
    for t in range(N):
        lp.add_row(list(P[:, t]) + list(S[:, t]), [1.0] * (G + B), dem[t], dem[t], "power_balance")
    for g in range(G):
        for t in range(N):
            if cut[g, t]:
                continue   # forced outage: no ramp limits into the curtailed state
            prevP = P[g, t - 1] if t > 0 else None
            up_rhs = (Rhr[g] * (u[g, t - 1] if t > 0 else u0[g])) + Rsu[g] * v[g, t]
            dn_rhs = Rhr[g] * u[g, t] + Rsd[g] * w[g, t]
            if prevP is None:
                lp.add_row([P[g, 0]], [1.0], -np.inf, p0[g] + up_rhs, "ramp_up")
                lp.add_row([P[g, 0]], [-1.0], -np.inf, dn_rhs - p0[g], "ramp_down")
            else:
                lp.add_row([P[g, t], prevP], [1.0, -1.0], -np.inf, up_rhs, "ramp_up")
                lp.add_row([prevP, P[g, t]], [1.0, -1.0], -np.inf, dn_rhs, "ramp_down")
    ptdf = compute_ptdf(system)
    gb = system.gen_bus_index()
    if system.branches:
        p_lo = np.array([b.p_min for b in system.branches])
        p_hi = np.array([b.p_max for b in system.branches])
        M = ptdf.matrix
        for l in range(len(system.branches)):
            cg = M[l, gb]
            cb = M[l]
            fd = cb @ load.T
            # flows move with both dispatch and shed; screen using the widest range
            reach_hi = np.clip(cg, 0, None) @ pmax + np.clip(cb, 0, None) @ load.max(axis=0)
            reach_lo = np.clip(cg, None, 0) @ pmax + np.clip(cb, None, 0) @ load.max(axis=0)
            for t in range(N):
                if reach_hi - fd[t] <= p_hi[l] - 1e-9 and reach_lo - fd[t] >= p_lo[l] + 1e-9:
                    continue
                nzg = np.flatnonzero(np.abs(cg) > 1e-12)
                nzb = np.flatnonzero(np.abs(cb) > 1e-12)
                lp.add_row(list(P[nzg, t]) + list(S[nzb, t]), list(cg[nzg]) + list(cb[nzb]),
                           p_lo[l] + fd[t], p_hi[l] + fd[t], "flow_limits")
    res = lp.solve()
    if not res.ok:
        # ramp limits around fixed or capped hours can conflict; report rather than crash
        log.warning("redispatch LP %s: %s", res.status, res.message)
        Pz = np.zeros((G, N))
        return DispatchResult(system.gen_ids, Pz, np.zeros((len(system.branches), N)), load.T.copy(),
                              math.inf, 0.0, math.inf, "infeasible")
    Px = np.clip(res.x[P], 0.0, None)
    Sx = np.clip(res.x[S], 0.0, None)
    inj = np.zeros((B, N))
    np.add.at(inj, gb, Px)
    flows = ptdf.matrix @ (inj - load.T + Sx)
    energy = float(np.sum(system.arr("cost")[:, None] * Px))
    shed_cost = float(voll * Sx.sum())
    status = "degraded" if Sx.sum() > 1e-6 else "optimal"
    return DispatchResult(system.gen_ids, Px, flows, Sx, energy + shed_cost, energy, shed_cost, status)


# ---------------------------------------------------------------------------- export

def write_schedule_csv(system: PowerSystem, schedule: CommitmentSchedule, dispatch: DispatchResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["generator", "hour", "u", "v", "w", "reserve_mw", "p_mw"])
        for g, gid in enumerate(schedule.gen_ids):
            for t in range(schedule.horizon):
                wr.writerow([gid, t, int(schedule.u[g, t]), repr(float(schedule.v[g, t])),
                             repr(float(schedule.w[g, t])), repr(float(schedule.r[g, t])),
                             repr(float(dispatch.P[g, t]))])


def read_schedule_csv(path):
    rows = list(csv.DictReader(open(path, newline="")))
    gens = list(dict.fromkeys(r["generator"] for r in rows))
    N = max(int(r["hour"]) for r in rows) + 1
    G = len(gens)
    arr = {k: np.zeros((G, N)) for k in ("u", "v", "w", "reserve_mw", "p_mw")}
    for r in rows:
        g = gens.index(r["generator"])
        t = int(r["hour"])
        for k in arr:
            arr[k][g, t] = float(r[k])
    return CommitmentSchedule(gens, arr["u"], arr["v"], arr["w"], arr["reserve_mw"]), arr["p_mw"]


def write_dispatch_csv(system: PowerSystem, dispatch: DispatchResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        N = dispatch.P.shape[1]
        wr.writerow(["kind", "id"] + [f"h{t}" for t in range(N)])
        for g, gid in enumerate(dispatch.gen_ids):
            wr.writerow(["generation_mw", gid] + [repr(float(x)) for x in dispatch.P[g]])
        for l, br in enumerate(system.branches):
            wr.writerow(["flow_mw", br.id] + [repr(float(x)) for x in dispatch.flows[l]])
        for b, bid in enumerate(system.buses):
            wr.writerow(["shed_mw", bid] + [repr(float(x)) for x in dispatch.shed[b]])
