"""Transient optimal gas flow: compressor ratio profiles that minimize compression energy.

The horizon is split into ``N_t - 1`` equal intervals.  Decision variables are
the state ``(rho_d, Phi)`` and compressor ratios ``alpha`` at every grid point,
plus an auxiliary slack per grid point for each compressor whose suction side
is a demand node (to bound the discharge density).  The network dynamics are
enforced at interval midpoints:

    F((x_{k+1} - x_k)/h, (x_k + x_{k+1})/2, u_{k+1/2}) = 0

with the midpoint ratio ``(alpha_k + alpha_{k+1})/2`` and the interval-average
withdrawal.  The energy seen by the optimizer uses the same midpoint values, so
an alternating ``alpha`` sequence changes neither dynamics nor energy; a small
quadratic penalty on consecutive ratio differences selects the smooth member of
that family.  The reported energy is the trapezoidal rule on the grid and
excludes the penalty.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .gas_network import GasNetwork
from .gas_transient import (ControlSignal, ControlValues, GasState, PiecewiseLinear, SteadyStateError,
                            _model, solve_steady_state)
from .interior_point import IPOptions, IPResult, NLPProblem, solve_nlp

log = logging.getLogger(__name__)

ABS_SMOOTHING = 1e-6


def compressor_energy(alpha, flux, area, eta, times, gamma: float = 1.4) -> float:
    """Trapezoidal quadrature of ``sum_e A_e |phi_e| / eta_e (alpha_e^((gamma-1)/gamma) - 1)``.

    ``alpha`` and ``flux`` are ``(T, E)`` arrays sampled at ``times``.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    flux = np.atleast_2d(np.asarray(flux, dtype=float))
    t = np.asarray(times, dtype=float)
    if alpha.shape != flux.shape or alpha.shape[0] != len(t):
        raise ValueError("alpha, flux and times must agree in shape")
    if (alpha < 1.0).any():
        raise ValueError("compressor ratios below 1")
    kappa = (gamma - 1.0) / gamma
    power = np.asarray(area, float) * np.abs(flux) / np.asarray(eta, float) * (alpha ** kappa - 1.0)
    total = power.sum(axis=1)
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * (total[1:] + total[:-1]) * np.diff(t)))


@dataclass
class TogfProblem:
    network: GasNetwork
    demand: PiecewiseLinear          # nondimensional withdrawal per demand node, hours
    slack_density: PiecewiseLinear   # nondimensional, per slack node
    horizon: float = 24.0
    n_points: int = 25
    periodic: bool = True
    initial_state: GasState | None = None
    density_margin: float = 0.0      # nondimensional tightening of the lower density bound
    free_withdrawal: bool = False
    smoothing: float | None = None   # None = automatic

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_points)


@dataclass
class TogfSolution:
    times: np.ndarray
    alpha: np.ndarray        # (N_t, E)
    rho: np.ndarray          # (N_t, N) all nodes
    flux: np.ndarray         # (N_t, P)
    demand: np.ndarray       # (N_t - 1, N_d) interval withdrawals used
    objective: float         # J_G
    penalized_objective: float
    status: str
    iterations: int
    stationarity: float
    feasibility: float
    complementarity: float
    compressor_ids: list[str]
    problem: TogfProblem = field(repr=False)
    iteration_log: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "optimal"

    def state(self, k: int) -> GasState:
        net = self.problem.network
        return GasState(self.rho[k, net.demand_idx].copy(), self.flux[k].copy())

    def controls(self) -> ControlSignal:
        p = self.problem
        dem = p.demand
        if p.free_withdrawal:
            knots = []
            vals = []
            for k in range(len(self.times) - 1):
                knots += [self.times[k], self.times[k + 1]]
                vals += [self.demand[k], self.demand[k]]
            dem = PiecewiseLinear(knots, vals)
        return ControlSignal(PiecewiseLinear(self.times, self.alpha), dem, p.slack_density,
                             list(self.compressor_ids))


class Transcription:
    """Index bookkeeping and callbacks for the collocated NLP."""

    def __init__(self, problem: TogfProblem):
        self.prob = problem
        net = problem.network
        self.net = net
        self.m = _model(net)
        if problem.n_points < 2:
            raise ValueError("collocation grid needs at least 2 points")
        self.Nt = problem.n_points
        self.t = problem.grid
        self.h_hours = problem.horizon / (self.Nt - 1)
        self.h = self.h_hours * 3600.0 * net.scaling.c / net.scaling.length
        Nd, P, E = net.n_demand, net.n_pipes, net.n_compressors
        self.Nd, self.P, self.E = Nd, P, E
        self.n = Nd + P
        self.kappa = (net.gamma - 1.0) / net.gamma

        s_grid = np.array([problem.slack_density(t) for t in self.t])
        self.s_grid = s_grid
        self.s_mid = np.array([problem.slack_density(0.5 * (a + b)) for a, b in zip(self.t[:-1], self.t[1:])])
        self.sdot_mid = (s_grid[1:] - s_grid[:-1]) / self.h
        self.d_mid = np.array([problem.demand.integral(a, b) / (b - a) for a, b in zip(self.t[:-1], self.t[1:])])

        dmin = net.d_min[net.demand_idx]
        dmax = net.d_max[net.demand_idx]
        if not problem.free_withdrawal:
            bad = (self.d_mid < dmin - 1e-12) | (self.d_mid > dmax + 1e-12)
            if bad.any():
                k, j = np.argwhere(bad)[0]
                raise ValueError(f"withdrawal at node {net.node_ids[net.demand_idx[j]]} outside its bounds "
                                 f"in interval {k}")

        # which compressors can vary, and discharge bounds
        comp_pipes = net.comp_idx
        self.comp_from = net.from_idx[comp_pipes]
        slack_pos = {int(i): k for k, i in enumerate(net.slack_idx)}
        self.alpha_lo = np.ones((self.Nt, E))
        self.alpha_hi = np.tile(net.alpha_max[comp_pipes], (self.Nt, 1))
        self.aux = []   # compressor positions needing a discharge slack variable
        for c, i in enumerate(self.comp_from):
            if int(i) in slack_pos:
                cap = net.rho_max[i] / s_grid[:, slack_pos[int(i)]]
                self.alpha_hi[:, c] = np.minimum(self.alpha_hi[:, c], cap)
            else:
                self.aux.append(c)
        if (self.alpha_hi < 1.0 - 1e-12).any():
            c = int(np.argwhere(self.alpha_hi < 1.0 - 1e-12)[0][1])
            raise ValueError(f"compressor {net.compressor_ids[c]}: discharge density limit is below the "
                             "supply density, no admissible ratio")
        self.alpha_hi = np.maximum(self.alpha_hi, 1.0)
        self.alpha_free = [c for c in range(E) if (self.alpha_hi[:, c] > 1.0).any()]
        self.Ef = len(self.alpha_free)
        self.S = len(self.aux)

        rho_lo = net.rho_min[net.demand_idx] + problem.density_margin
        rho_hi = net.rho_max[net.demand_idx]
        if (rho_lo >= rho_hi).any():
            raise ValueError("density margin leaves an empty density range")
        self.rho_lo, self.rho_hi = rho_lo, rho_hi

        # layout: per grid point [rho_d, Phi, alpha_free, sigma], then interval withdrawals
        self.blk = self.n + self.Ef + self.S
        self.n_grid_vars = self.Nt * self.blk
        self.n_dvars = (self.Nt - 1) * Nd if problem.free_withdrawal else 0
        self.nvar = self.n_grid_vars + self.n_dvars
        self.n_dyn = (self.Nt - 1) * self.n
        self.ncon = self.n_dyn + self.n + self.Nt * self.S

        # smoothing penalty weight
        self.w = np.full(self.Nt, self.h_hours)
        self.w[0] *= 0.5
        self.w[-1] *= 0.5
        self.coef = net.X[comp_pipes] / net.eta[comp_pipes]
        self.eps_s = problem.smoothing

    # ---------------------------------------------------------------- layout
    @property
    def n_primary_variables(self) -> int:
        """State and ratio variables only: ``(N_d + P) N_t + E N_t``."""
        return (self.n + self.E) * self.Nt

    def ix(self, k):
        return k * self.blk + np.arange(self.n)

    def ia(self, k):
        return k * self.blk + self.n + np.arange(self.Ef)

    def isg(self, k):
        return k * self.blk + self.n + self.Ef + np.arange(self.S)

    def idm(self, k):
        return self.n_grid_vars + k * self.Nd + np.arange(self.Nd)

    def unpack(self, z):
        X = np.array([z[self.ix(k)] for k in range(self.Nt)])
        A = np.ones((self.Nt, self.E))
        for j, c in enumerate(self.alpha_free):
            A[:, c] = [z[self.ia(k)[j]] for k in range(self.Nt)]
        D = np.array([z[self.idm(k)] for k in range(self.Nt - 1)]) if self.n_dvars else self.d_mid.copy()
        return X, A, D

    def bounds(self):
        lb = np.full(self.nvar, -np.inf)
        ub = np.full(self.nvar, np.inf)
        for k in range(self.Nt):
            ix = self.ix(k)
            lb[ix[: self.Nd]] = self.rho_lo
            ub[ix[: self.Nd]] = self.rho_hi
            ia = self.ia(k)
            for j, c in enumerate(self.alpha_free):
                lb[ia[j]] = self.alpha_lo[k, c]
                ub[ia[j]] = self.alpha_hi[k, c]
            isg = self.isg(k)
            for j, c in enumerate(self.aux):
                ub[isg[j]] = self.net.rho_max[self.comp_from[c]]
        if self.n_dvars:
            dmin = self.net.d_min[self.net.demand_idx]
            dmax = self.net.d_max[self.net.demand_idx]
            for k in range(self.Nt - 1):
                lb[self.idm(k)] = dmin
                ub[self.idm(k)] = dmax
        return lb, ub

    def pack(self, X, A, D=None):
        z = np.zeros(self.nvar)
        for k in range(self.Nt):
            z[self.ix(k)] = X[k]
            for j, c in enumerate(self.alpha_free):
                z[self.ia(k)[j]] = A[k, c]
            isg = self.isg(k)
            for j, c in enumerate(self.aux):
                z[isg[j]] = A[k, c] * X[k][self.m.dpos[self.comp_from[c]]]
        if self.n_dvars:
            D = self.d_mid if D is None else D
            for k in range(self.Nt - 1):
                z[self.idm(k)] = D[k]
        return z

    # ---------------------------------------------------------------- controls at midpoints
    def _u_mid(self, k, A, D):
        return ControlValues(0.5 * (A[k] + A[k + 1]), D[k], self.s_mid[k], self.sdot_mid[k])

    def _dF_dalpha(self, x, xdot, u):
        """Partial derivatives of F with respect to each compressor ratio."""
        m, net = self.m, self.net
        r = m.nodes(x[: self.Nd], u.s)
        rd = m.nodes(xdot[: self.Nd], u.sdot)
        phi = x[self.Nd:]
        a = net.alpha_per_pipe(u.alpha)
        y = a * r[m.fr] + r[m.to]
        G = np.zeros((self.n, self.E))
        for c, e in enumerate(net.comp_idx):
            i = m.fr[e]
            G[: self.Nd, c] = m.absA_d[:, e] * m.XL[e] * rd[i]
            G[self.Nd + e, c] = -r[i] / m.Lam[e] - m.K[e] * phi[e] * abs(phi[e]) * r[i] / y[e] ** 2
        return G

    # ---------------------------------------------------------------- callbacks
    def smoothing_weight(self, X):
        if self.eps_s is not None:
            return self.eps_s
        if not self.Ef:
            return 0.0
        phi = np.abs(X[:, self.Nd + self.net.comp_idx])
        return float(0.1 * self.kappa * self.h_hours * (self.coef[None, :] * (phi + ABS_SMOOTHING)).max())

    def _mid_energy_terms(self, X, A):
        phi = 0.5 * (X[:-1, self.Nd + self.net.comp_idx] + X[1:, self.Nd + self.net.comp_idx])
        am = 0.5 * (A[:-1] + A[1:])
        s2 = phi ** 2 + ABS_SMOOTHING ** 2
        ab = np.sqrt(s2)
        return phi, am, s2, ab

    def objective(self, z):
        X, A, _ = self.unpack(z)
        if not self.E:
            return 0.0
        phi, am, s2, ab = self._mid_energy_terms(X, A)
        val = float(np.sum(self.h_hours * self.coef[None, :] * ab * (am ** self.kappa - 1.0)))
        if self.Ef:
            val += self._eps * float(np.sum(np.diff(A[:, self.alpha_free], axis=0) ** 2))
        return val

    def gradient(self, z):
        X, A, _ = self.unpack(z)
        g = np.zeros(self.nvar)
        if not self.E:
            return g
        ce = self.net.comp_idx
        phi, am, s2, ab = self._mid_energy_terms(X, A)
        kap = self.kappa
        gphi = 0.5 * self.h_hours * self.coef * (phi / ab) * (am ** kap - 1.0)
        galp = 0.5 * self.h_hours * self.coef * ab * kap * am ** (kap - 1.0)
        fpos = {c: j for j, c in enumerate(self.alpha_free)}
        for k in range(self.Nt - 1):
            for kk in (k, k + 1):
                g[self.ix(kk)[self.Nd + ce]] += gphi[k]
                ia = self.ia(kk)
                for c, j in fpos.items():
                    g[ia[j]] += galp[k, c]
        if self.Ef:
            Af = A[:, self.alpha_free]
            dA = np.diff(Af, axis=0)
            gp = np.zeros_like(Af)
            gp[1:] += 2 * self._eps * dA
            gp[:-1] -= 2 * self._eps * dA
            for k in range(self.Nt):
                g[self.ia(k)] += gp[k]
        return g

    def constraints(self, z):
        X, A, D = self.unpack(z)
        out = np.empty(self.ncon)
        for k in range(self.Nt - 1):
            xm = 0.5 * (X[k] + X[k + 1])
            xd = (X[k + 1] - X[k]) / self.h
            out[k * self.n:(k + 1) * self.n] = self.m.residual(xd, xm, self._u_mid(k, A, D))
        o = self.n_dyn
        if self.prob.periodic:
            out[o:o + self.n] = X[-1] - X[0]
        else:
            out[o:o + self.n] = X[0] - self.prob.initial_state.vector
        o += self.n
        for k in range(self.Nt):
            sg = z[self.isg(k)]
            for j, c in enumerate(self.aux):
                out[o] = A[k, c] * X[k][self.m.dpos[self.comp_from[c]]] - sg[j]
                o += 1
        return out

    def jacobian(self, z):
        X, A, D = self.unpack(z)
        rows, cols, vals = [], [], []
        n = self.n
        fpos = {c: j for j, c in enumerate(self.alpha_free)}

        def put(r, c, block):
            rr, cc = np.meshgrid(r, c, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(np.asarray(block).ravel())

        for k in range(self.Nt - 1):
            xm = 0.5 * (X[k] + X[k + 1])
            xd = (X[k + 1] - X[k]) / self.h
            u = self._u_mid(k, A, D)
            Fx = self.m.jac_x(xm, u)
            Fe = self.m.jac_xdot(u)
            r = np.arange(k * n, (k + 1) * n)
            put(r, self.ix(k), 0.5 * Fx - Fe / self.h)
            put(r, self.ix(k + 1), 0.5 * Fx + Fe / self.h)
            if self.Ef:
                Ga = self._dF_dalpha(xm, xd, u)[:, self.alpha_free]
                put(r, self.ia(k), 0.5 * Ga)
                put(r, self.ia(k + 1), 0.5 * Ga)
            if self.n_dvars:
                put(r[: self.Nd], self.idm(k), 4.0 * np.eye(self.Nd))
        o = self.n_dyn
        r = np.arange(o, o + n)
        if self.prob.periodic:
            put(r, self.ix(self.Nt - 1), np.eye(n))
            put(r, self.ix(0), -np.eye(n))
        else:
            put(r, self.ix(0), np.eye(n))
        o += n
        for k in range(self.Nt):
            ix = self.ix(k)
            isg = self.isg(k)
            for j, c in enumerate(self.aux):
                di = self.m.dpos[self.comp_from[c]]
                rows += [np.array([o]), np.array([o])]
                cols += [np.array([ix[di]]), np.array([isg[j]])]
                vals += [np.array([A[k, c]]), np.array([-1.0])]
                if c in fpos:
                    rows.append(np.array([o]))
                    cols.append(np.array([self.ia(k)[fpos[c]]]))
                    vals.append(np.array([X[k][di]]))
                o += 1
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.ncon, self.nvar))

    def _local_hessian(self, x, xd, u, lam):
        """Hessian of ``lam^T F`` in local coordinates ``(x_m, xdot_m, alpha_m)``."""
        m, net, n, Nd = self.m, self.net, self.n, self.Nd
        L = 2 * n + self.E
        H = np.zeros((L, L))
        r = m.nodes(x[:Nd], u.s)
        phi = x[Nd:]
        a = net.alpha_per_pipe(u.alpha)
        y = a * r[m.fr] + r[m.to]
        cpos = -np.ones(self.P, dtype=int)
        cpos[net.comp_idx] = np.arange(self.E)
        for e in range(self.P):
            mu = lam[Nd + e]
            if mu == 0.0:
                continue
            K = m.K[e]
            G = K * phi[e] * abs(phi[e])
            Ry = -G / y[e] ** 2
            Ryy = 2 * G / y[e] ** 3
            Rpy = -2 * K * abs(phi[e]) / y[e] ** 2
            Rpp = 2 * K * np.sign(phi[e]) / y[e]
            iphi = Nd + e
            idx = [iphi]
            gy = [0.0]
            di = m.dpos[m.fr[e]]
            dj = m.dpos[m.to[e]]
            if di >= 0:
                idx.append(di)
                gy.append(a[e])
            if dj >= 0:
                idx.append(dj)
                gy.append(1.0)
            ca = cpos[e]
            if ca >= 0:
                idx.append(2 * n + ca)
                gy.append(r[m.fr[e]])
            idx = np.array(idx)
            gy = np.array(gy)
            blk = Ryy * np.outer(gy, gy)
            blk[0, :] += Rpy * gy
            blk[:, 0] += Rpy * gy
            blk[0, 0] += Rpp
            H[np.ix_(idx, idx)] += mu * blk
            if ca >= 0 and di >= 0:
                v = mu * (Ry - 1.0 / m.Lam[e])
                H[2 * n + ca, di] += v
                H[di, 2 * n + ca] += v
        # mass rows: alpha times the suction density rate
        for ca, e in enumerate(net.comp_idx):
            di = m.dpos[m.fr[e]]
            if di < 0:
                continue
            v = float(lam[:Nd] @ m.absA_d[:, e]) * m.XL[e]
            if v:
                H[2 * n + ca, n + di] += v
                H[n + di, 2 * n + ca] += v
        return H

    def hessian(self, z, lam, obj_factor):
        X, A, D = self.unpack(z)
        n, E = self.n, self.E
        rows, cols, vals = [], [], []
        # local -> global map over (x_k, x_k+1, alpha_k, alpha_k+1)
        M = np.zeros((2 * n + E, 2 * n + 2 * E))
        I = np.eye(n)
        M[:n, :n] = 0.5 * I
        M[:n, n:2 * n] = 0.5 * I
        M[n:2 * n, :n] = -I / self.h
        M[n:2 * n, n:2 * n] = I / self.h
        M[2 * n:, 2 * n:2 * n + E] = 0.5 * np.eye(E)
        M[2 * n:, 2 * n + E:] = 0.5 * np.eye(E)
        fpos = {c: j for j, c in enumerate(self.alpha_free)}
        for k in range(self.Nt - 1):
            lk = lam[k * n:(k + 1) * n]
            xm = 0.5 * (X[k] + X[k + 1])
            xd = (X[k + 1] - X[k]) / self.h
            Hl = self._local_hessian(xm, xd, self._u_mid(k, A, D), lk)
            Hg = M.T @ Hl @ M
            gidx = np.concatenate([self.ix(k), self.ix(k + 1),
                                   [self.ia(k)[fpos[c]] if c in fpos else -1 for c in range(E)],
                                   [self.ia(k + 1)[fpos[c]] if c in fpos else -1 for c in range(E)]]).astype(int)
            keep = gidx >= 0
            gi = gidx[keep]
            Hk = Hg[np.ix_(keep, keep)]
            rr, cc = np.meshgrid(gi, gi, indexing="ij")
            nz = Hk != 0
            rows.append(rr[nz])
            cols.append(cc[nz])
            vals.append(Hk[nz])
        o = self.n_dyn + n
        for k in range(self.Nt):
            for c in self.aux:
                lv = lam[o]
                o += 1
                if c in fpos and lv:
                    di = self.ix(k)[self.m.dpos[self.comp_from[c]]]
                    ai = self.ia(k)[fpos[c]]
                    rows.append(np.array([di, ai]))
                    cols.append(np.array([ai, di]))
                    vals.append(np.array([lv, lv]))
        if E and obj_factor:
            ce = self.net.comp_idx
            phi, am, s2, ab = self._mid_energy_terms(X, A)
            kap = self.kappa
            for k in range(self.Nt - 1):
                for c in range(E):
                    wc = obj_factor * self.h_hours * self.coef[c]
                    hpp = wc * ABS_SMOOTHING ** 2 / (s2[k, c] * ab[k, c]) * (am[k, c] ** kap - 1.0)
                    hpa = wc * (phi[k, c] / ab[k, c]) * kap * am[k, c] ** (kap - 1.0)
                    haa = wc * ab[k, c] * kap * (kap - 1.0) * am[k, c] ** (kap - 2.0)
                    ip = [self.ix(k)[self.Nd + ce[c]], self.ix(k + 1)[self.Nd + ce[c]]]
                    ia = [self.ia(k)[fpos[c]], self.ia(k + 1)[fpos[c]]] if c in fpos else []
                    # each midpoint quantity is the mean of two grid values
                    for r_ in ip:
                        for c_ in ip:
                            rows.append(np.array([r_]))
                            cols.append(np.array([c_]))
                            vals.append(np.array([0.25 * hpp]))
                        for c_ in ia:
                            rows.append(np.array([r_, c_]))
                            cols.append(np.array([c_, r_]))
                            vals.append(np.array([0.25 * hpa, 0.25 * hpa]))
                    for r_ in ia:
                        for c_ in ia:
                            rows.append(np.array([r_]))
                            cols.append(np.array([c_]))
                            vals.append(np.array([0.25 * haa]))
            if self.Ef:
                e2 = 2 * obj_factor * self._eps
                for j in range(self.Ef):
                    for k in range(self.Nt - 1):
                        i0 = self.ia(k)[j]
                        i1 = self.ia(k + 1)[j]
                        rows.append(np.array([i0, i1, i0, i1]))
                        cols.append(np.array([i0, i1, i1, i0]))
                        vals.append(np.array([e2, e2, -e2, -e2]))
        if not rows:
            return sp.csr_matrix((self.nvar, self.nvar))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.nvar, self.nvar))

    # ---------------------------------------------------------------- start point
    def initial_point(self):
        net = self.net
        d_avg = self.d_mid.mean(axis=0)
        s_avg = self.s_grid.mean(axis=0)
        alpha0 = np.ones(self.E)
        for c in self.alpha_free:
            alpha0[c] = 0.5 * (1.0 + float(self.alpha_hi[:, c].min()))
        x = None
        for trial in (alpha0, np.ones(self.E)):
            try:
                x = solve_steady_state(net, ControlValues(trial, d_avg, s_avg, np.zeros_like(s_avg))).vector
                alpha0 = trial
                break
            except (SteadyStateError, ValueError):
                continue
        if x is None:
            x = np.concatenate([np.full(self.Nd, float(np.mean(s_avg))), np.zeros(self.P)])
        if self.prob.initial_state is not None and not self.prob.periodic:
            x = self.prob.initial_state.vector
        X = np.tile(x, (self.Nt, 1))
        A = np.tile(alpha0, (self.Nt, 1))
        self._eps = self.smoothing_weight(X)
        return self.pack(X, A)

    def nlp(self) -> NLPProblem:
        z0 = self.initial_point()
        lb, ub = self.bounds()
        return NLPProblem(self.nvar, self.ncon, z0, lb, ub, self.objective, self.gradient,
                          self.constraints, self.jacobian, self.hessian)


def transcribe(problem: TogfProblem) -> Transcription:
    if not problem.periodic and problem.initial_state is None:
        raise ValueError("fixed-initial mode needs an initial state")
    return Transcription(problem)


def _is_trivial(tr: Transcription) -> bool:
    return (not tr.prob.free_withdrawal and np.all(tr.d_mid == 0.0)
            and np.all(tr.s_grid == tr.s_grid[0]) and tr.prob.periodic
            and tr.net.n_slack == 1)


def solve_togf(problem: TogfProblem, options: IPOptions | None = None) -> TogfSolution:
    """Solve the collocated problem with the interior-point method."""
    tr = transcribe(problem)
    net = tr.net
    nlp = tr.nlp()
    if _is_trivial(tr):
        # no withdrawals: every ratio is energy-neutral; the flat no-flow state with unit ratios is optimal
        z = tr.pack(np.tile(np.concatenate([np.full(tr.Nd, tr.s_grid[0, 0]), np.zeros(tr.P)]), (tr.Nt, 1)),
                    np.ones((tr.Nt, tr.E)))
        tr._eps = 0.0
        c = tr.constraints(z)
        lb, ub = tr.bounds()
        if np.max(np.abs(c), initial=0.0) <= 1e-12 and np.all(z >= lb) and np.all(z <= ub):
            res = IPResult(z, np.zeros(tr.ncon), np.zeros(tr.nvar), np.zeros(tr.nvar), "optimal", 0, 0.0,
                           float(np.max(np.abs(tr.gradient(z)), initial=0.0)), 0.0, 0.0, [])
            return _finish(tr, res)
    res = _solve_scaled(nlp, options or IPOptions())
    if res.status != "optimal":
        log.warning("TOGF solver finished with status %s after %d iterations", res.status, res.iterations)
    return _finish(tr, res)


def _solve_scaled(nlp: NLPProblem, options: IPOptions) -> IPResult:
    """Scale the objective so its gradient is O(1), then report unscaled residuals."""
    g0 = float(np.max(np.abs(nlp.gradient(nlp.x0)), initial=0.0))
    scale = 1.0 if g0 >= 1.0 or g0 == 0.0 else min(1e4, 1.0 / g0)
    scaled = NLPProblem(nlp.n, nlp.m, nlp.x0, nlp.lb, nlp.ub,
                        lambda z: scale * nlp.objective(z),
                        lambda z: scale * nlp.gradient(z),
                        nlp.constraints, nlp.jacobian,
                        lambda z, lam, of: nlp.hessian(z, lam, of * scale))
    res = solve_nlp(scaled, options)
    lam, zl, zu = res.lam / scale, res.zl / scale, res.zu / scale
    g = nlp.gradient(res.x)
    J = nlp.jacobian(res.x)
    st = float(np.max(np.abs(g + J.T @ lam - zl + zu), initial=0.0))
    fl = np.isfinite(nlp.lb)
    fu = np.isfinite(nlp.ub)
    comp = np.concatenate([(res.x[fl] - nlp.lb[fl]) * zl[fl], (nlp.ub[fu] - res.x[fu]) * zu[fu]])
    co = float(np.max(np.abs(comp), initial=0.0))
    return IPResult(res.x, lam, zl, zu, res.status, res.iterations, float(nlp.objective(res.x)), st,
                    res.feasibility, co, res.log)


def _finish(tr: Transcription, res: IPResult) -> TogfSolution:
    net = tr.net
    X, A, D = tr.unpack(res.x)
    rho = np.empty((tr.Nt, net.n_nodes))
    rho[:, net.demand_idx] = X[:, : tr.Nd]
    rho[:, net.slack_idx] = tr.s_grid
    flux = X[:, tr.Nd:]
    ce = net.comp_idx
    jg = compressor_energy(A, flux[:, ce], net.X[ce], net.eta[ce], tr.t, net.gamma) if tr.E else 0.0
    return TogfSolution(
        times=tr.t.copy(), alpha=A, rho=rho, flux=flux, demand=D, objective=jg,
        penalized_objective=float(tr.objective(res.x)), status=res.status, iterations=res.iterations,
        stationarity=res.stationarity, feasibility=res.feasibility, complementarity=res.complementarity,
        compressor_ids=list(net.compressor_ids), problem=tr.prob, iteration_log=list(res.log),
    )


def collocation_residuals(solution: TogfSolution) -> np.ndarray:
    """Re-evaluate the network residual at every interval midpoint; shape ``(N_t - 1, N_d + P)``."""
    from .gas_transient import dae_residual
    p = solution.problem
    net = p.network
    tr = Transcription(p)
    out = []
    for k in range(len(solution.times) - 1):
        x0 = np.concatenate([solution.rho[k, net.demand_idx], solution.flux[k]])
        x1 = np.concatenate([solution.rho[k + 1, net.demand_idx], solution.flux[k + 1]])
        u = ControlValues(0.5 * (solution.alpha[k] + solution.alpha[k + 1]), solution.demand[k],
                          tr.s_mid[k], tr.sdot_mid[k])
        out.append(dae_residual((x1 - x0) / tr.h, 0.5 * (x0 + x1), u, net))
    return np.array(out)


def write_solution_csv(solution: TogfSolution, path) -> None:
    net = solution.problem.network
    header = (["time_h"] + [f"alpha_{c}" for c in solution.compressor_ids]
              + [f"rho_{n}" for n in net.node_ids] + [f"pressure_pa_{n}" for n in net.node_ids]
              + [f"flux_{p.id}" for p in net.pipes])
    pa = net.pressure_pa(solution.rho)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(solution.times):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in solution.alpha[k]]
                       + [repr(float(v)) for v in solution.rho[k]] + [repr(float(v)) for v in pa[k]]
                       + [repr(float(v)) for v in solution.flux[k]])


def write_iteration_log(solution: TogfSolution, path) -> None:
    keys = ["iter", "objective", "mu", "stationarity", "feasibility", "complementarity"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in solution.iteration_log:
            if "iter" in row:
                w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in keys])
