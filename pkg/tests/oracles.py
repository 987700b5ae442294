"""Reference computations used as independent checks in the test suite.

Each routine solves its problem by a different route than the package does:
plain power series instead of uniformization, angle formulation instead of
PTDF, direct tree propagation instead of Newton, brute-force enumeration
instead of branch and bound.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog


# ---------------------------------------------------------------- Markov chain

def expm_series(Q, t, terms=80):
    """Truncated Taylor series of ``exp(tQ)``."""
    A = t * np.asarray(Q, dtype=float)
    out = np.eye(len(A))
    term = np.eye(len(A))
    for n in range(1, terms):
        term = term @ A / n
        out = out + term
    return out


# ---------------------------------------------------------------- DC power flow

def angle_flows(buses, branches, ref, injection):
    """Branch flows from ``B' theta = P`` with ``theta_ref = 0``.

    ``branches`` are ``(from, to, susceptance)`` tuples.
    """
    idx = {b: i for i, b in enumerate(buses)}
    n = len(buses)
    B = np.zeros((n, n))
    for f, t, b in branches:
        i, j = idx[f], idx[t]
        B[i, i] += b
        B[j, j] += b
        B[i, j] -= b
        B[j, i] -= b
    keep = [i for i in range(n) if i != idx[ref]]
    theta = np.zeros(n)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], np.asarray(injection, float)[keep])
    return np.array([b * (theta[idx[f]] - theta[idx[t]]) for f, t, b in branches])


# ---------------------------------------------------------------- gas steady state

def steady_radial(net, alpha_comp, demand_nd, slack=None):
    """Steady state of a radial single-slack network by tree propagation.

    Pipe flow carries everything withdrawn beyond it; the outlet density
    follows ``rho_j^2 = (alpha rho_i)^2 - Lam K Phi |Phi|``.  Returns
    ``(rho_all, flux)`` or ``None`` when some density would be imaginary.
    """
    s = net.slack_density if slack is None else np.atleast_1d(slack)
    assert len(net.slack_idx) == 1
    alpha = np.ones(net.n_pipes)
    for k, e in enumerate(net.comp_idx):
        alpha[e] = alpha_comp[k]
    d = np.zeros(net.n_nodes)
    d[net.demand_idx] = demand_nd
    children = {i: [] for i in range(net.n_nodes)}
    for e in range(net.n_pipes):
        children[int(net.from_idx[e])].append(e)

    def subtree(i):
        return d[i] + sum(subtree(int(net.to_idx[e])) for e in children[i])

    rho = np.full(net.n_nodes, np.nan)
    flux = np.zeros(net.n_pipes)
    root = int(net.slack_idx[0])
    rho[root] = s[0]
    stack = [root]
    while stack:
        i = stack.pop()
        for e in children[i]:
            j = int(net.to_idx[e])
            flux[e] = subtree(j) / net.X[e]
            sq = (alpha[e] * rho[i]) ** 2 - net.Lam[e] * net.K[e] * flux[e] * abs(flux[e])
            if sq <= 0:
                return None
            rho[j] = math.sqrt(sq)
            stack.append(j)
    return rho, flux


def critical_ratio(net, comp_k, alpha_other, demand_nd, lo=1.0, hi=None, tol=1e-10):
    """Smallest ratio of compressor ``comp_k`` keeping every node at or above its minimum density."""
    hi = net.alpha_max[comp_k] if hi is None else hi

    def ok(a):
        al = np.array(alpha_other, dtype=float)
        al[comp_k] = a
        sol = steady_radial(net, al, demand_nd)
        if sol is None:
            return False
        rho, _ = sol
        return bool(np.all(rho[net.demand_idx] >= net.rho_min[net.demand_idx]))

    if ok(lo):
        return lo
    if not ok(hi):
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------- unit commitment

def _dense_scuc_lp(system, load, u, reserves=True):
    """Objective and optimum of the commitment problem with ``u`` fixed, assembled densely."""
    gens = system.generators
    G, N = len(gens), load.shape[0]
    nv = 4 * G * N              # P, v, w, r ; u enters as data

    def P(g, t):
        return g * N + t

    def V(g, t):
        return G * N + g * N + t

    def W(g, t):
        return 2 * G * N + g * N + t

    def R(g, t):
        return 3 * G * N + g * N + t

    def cap(x, g):
        return gens[g].p_max if not math.isfinite(x) else x

    A_ub, b_ub, A_eq, b_eq = [], [], [], []

    def row():
        return np.zeros(nv)

    c = np.zeros(nv)
    const = 0.0
    bounds = [None] * nv
    for g, gen in enumerate(gens):
        rcap = cap(gen.reserve_cap, g) if reserves else 0.0
        for t in range(N):
            c[P(g, t)] = gen.cost
            c[V(g, t)] = gen.startup_cost
            c[W(g, t)] = gen.shutdown_cost
            c[R(g, t)] = gen.reserve_cost
            const += gen.no_load_cost * u[g, t]
            bounds[P(g, t)] = (0, gen.p_max)
            bounds[V(g, t)] = (0, 1)
            bounds[W(g, t)] = (0, 1)
            bounds[R(g, t)] = (0, rcap * u[g, t])
            # pmin u + r <= P <= pmax u - r
            a = row(); a[R(g, t)] = 1; a[P(g, t)] = -1
            A_ub.append(a); b_ub.append(-gen.p_min * u[g, t])
            a = row(); a[P(g, t)] = 1; a[R(g, t)] = 1
            A_ub.append(a); b_ub.append(gen.p_max * u[g, t])
            # v - w = u_t - u_{t-1}
            prev = (1.0 if gen.initial_on else 0.0) if t == 0 else u[g, t - 1]
            a = row(); a[V(g, t)] = 1; a[W(g, t)] = -1
            A_eq.append(a); b_eq.append(u[g, t] - prev)
            # ramps
            rhr, rsu, rsd = cap(gen.ramp_hr, g), cap(gen.ramp_su, g), cap(gen.ramp_sd, g)
            a = row(); a[P(g, t)] = 1; a[V(g, t)] = -rsu
            if t == 0:
                A_ub.append(a); b_ub.append(gen.initial_p + rhr * prev)
            else:
                a[P(g, t - 1)] = -1
                A_ub.append(a); b_ub.append(rhr * u[g, t - 1])
            a = row(); a[P(g, t)] = -1; a[W(g, t)] = -rsd
            if t == 0:
                A_ub.append(a); b_ub.append(rhr * u[g, t] - gen.initial_p)
            else:
                a[P(g, t - 1)] = 1
                A_ub.append(a); b_ub.append(rhr * u[g, t])
            # minimum up and down times
            if t >= gen.min_up - 1:
                a = row()
                for s in range(t - gen.min_up + 1, t + 1):
                    a[V(g, s)] = 1
                A_ub.append(a); b_ub.append(u[g, t])
            if t >= gen.min_down - 1:
                a = row()
                for s in range(t - gen.min_down + 1, t + 1):
                    a[W(g, s)] = 1
                A_ub.append(a); b_ub.append(1 - u[g, t])
    ptdf_buses = system.buses
    for t in range(N):
        a = row()
        for g in range(G):
            a[P(g, t)] = 1
        A_eq.append(a); b_eq.append(load[t].sum())
        if reserves:
            a = row()
            for g in range(G):
                a[R(g, t)] = -1
            A_ub.append(a); b_ub.append(-0.07 * load[t].sum())
            for k in range(G):
                a = row()
                for g in range(G):
                    a[R(g, t)] = -1
                a[P(k, t)] += 1
                a[R(k, t)] += 1
                A_ub.append(a); b_ub.append(0.0)
        # every line, by angles: flow = S (inj - load) with S built column-wise from the oracle
        if system.branches:
            br = [(b.from_bus, b.to_bus, b.susceptance) for b in system.branches]
            S = np.column_stack([angle_flows(ptdf_buses, br, system.ref_bus, np.eye(len(ptdf_buses))[i])
                                 for i in range(len(ptdf_buses))])
            base = S @ load[t]
            for l, b in enumerate(system.branches):
                a = row()
                for g, gen in enumerate(gens):
                    a[P(g, t)] = S[l, ptdf_buses.index(gen.bus)]
                A_ub.append(a); b_ub.append(b.p_max + base[l])
                A_ub.append(-a); b_ub.append(-(b.p_min + base[l]))
    res = linprog(c, A_ub=np.array(A_ub), b_ub=np.array(b_ub), A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return res.fun + const


def _min_up_down_ok(gen, u_row):
    """Pattern-level screen equivalent to the rows with integral start/stop indicators."""
    prev = 1.0 if gen.initial_on else 0.0
    d = np.diff(np.concatenate([[prev], u_row]))
    v = np.maximum(d, 0)
    w = np.maximum(-d, 0)
    N = len(u_row)
    for t in range(gen.min_up - 1, N):
        if v[t - gen.min_up + 1:t + 1].sum() > u_row[t]:
            return False
    for t in range(gen.min_down - 1, N):
        if w[t - gen.min_down + 1:t + 1].sum() > 1 - u_row[t]:
            return False
    return True


def enumerate_scuc(system, load, reserves=True):
    """Exhaustive search over all ``2^(G N)`` commitment patterns; returns ``(cost, u)``."""
    load = np.asarray(load, dtype=float)
    G, N = system.n_gens, load.shape[0]
    best = (math.inf, None)
    rows = [[np.array(p, dtype=float) for p in itertools.product((0, 1), repeat=N)] for _ in range(G)]
    for pattern in itertools.product(*rows):
        u = np.array(pattern)
        # patterns whose integral v,w break the min-up/down rows can still be LP-feasible with
        # fractional v = w > 0 only if that lowers the sums, which it never does; skip them
        if not all(_min_up_down_ok(gen, u[g]) for g, gen in enumerate(system.generators)):
            continue
        cost = _dense_scuc_lp(system, load, u, reserves)
        if cost is not None and cost < best[0] - 1e-9:
            best = (cost, u)
    return best
