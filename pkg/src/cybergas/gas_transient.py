"""Transient gas flow on the lumped-element network model.

State ``x = (rho_d, Phi)``: nondimensional densities at non-slack nodes and
mid-pipe mass fluxes.  The dynamics are written as the implicit system
``F(xdot, x, u) = 0`` with

    mass      |A_d| X Lam |B^T| rhodot - 4 (A_d X Phi - d) = 0
    momentum  Phidot + Lam^-1 B^T rho + K g(Phi, |B^T| rho) = 0

where ``rho`` stacks demand densities and prescribed slack densities ``s(t)``
and ``g_j(x, y) = x_j |x_j| / y_j``.  Time inside the integrator is
nondimensional; every public time argument is in hours.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .attack_chain import ContingencyWindow
from .gas_network import GasNetwork

log = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-5
OUTPUT_DT_H = 5.0 / 60.0


class SteadyStateError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


class PiecewiseLinear:
    """Vector-valued piecewise-linear function of time.

    Knot times are non-decreasing; a repeated knot encodes a jump, and the
    function is right-continuous there.  Outside the knot range the end
    values are held.
    """

    def __init__(self, times, values):
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or len(t) == 0 or v.shape[0] != len(t):
            raise ValueError("times and values must have matching first dimension")
        if np.any(np.diff(t) < 0):
            raise ValueError("knot times must be non-decreasing")
        self.times = t
        self.values = v

    @classmethod
    def constant(cls, value, t0=0.0, t1=24.0):
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls([t0, t1], np.vstack([v, v]))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def _interp(self, i, t):
        t0, t1 = self.times[i], self.times[i + 1]
        if t1 == t0:
            return self.values[i + 1].copy()
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def __call__(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self.values[0].copy() if not (len(ts) > 1 and ts[1] == ts[0] and t == ts[0]) else self.values[1].copy()
        if t >= ts[-1]:
            return self.values[-1].copy()
        i = int(np.searchsorted(ts, t, side="right")) - 1
        return self._interp(i, t)

    def left(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self.values[0].copy()
        if t > ts[-1]:
            return self.values[-1].copy()
        i = int(np.searchsorted(ts, t, side="left")) - 1
        return self._interp(i, t) if ts[i + 1] != ts[i] else self.values[i].copy()

    def slope(self, t: float) -> np.ndarray:
        ts = self.times
        if t < ts[0] or t >= ts[-1]:
            return np.zeros(self.width)
        i = int(np.searchsorted(ts, t, side="right")) - 1
        dt = ts[i + 1] - ts[i]
        if dt == 0:
            return np.zeros(self.width)
        return (self.values[i + 1] - self.values[i]) / dt

    def jump_times(self) -> list[float]:
        ts = self.times
        out = []
        for i in np.flatnonzero(np.diff(ts) == 0):
            if np.any(self.values[i] != self.values[i + 1]):
                out.append(float(ts[i]))
        return out

    def sample(self, grid) -> np.ndarray:
        return np.array([self(t) for t in grid])

    def integral(self, t0: float, t1: float) -> np.ndarray:
        """Exact integral over ``[t0, t1]``."""
        if t1 <= t0:
            return np.zeros(self.width)
        inner = self.times[(self.times > t0) & (self.times < t1)]
        pts = np.concatenate([[t0], np.unique(inner), [t1]])
        total = np.zeros(self.width)
        for a, b in zip(pts[:-1], pts[1:]):
            total += 0.5 * (b - a) * (self(a) + self.left(b))
        return total

    def with_column_override(self, col: int, t0: float, t1: float, value: float) -> "PiecewiseLinear":
        """Copy with column ``col`` held at ``value`` on ``[t0, t1]``."""
        ts = self.times
        inside = (ts > t0) & (ts < t1)
        new_t = [t0, t0, t1, t1]
        new_v = [self.left(t0), self(t0), self.left(t1), self(t1)]
        new_v[1] = new_v[1].copy()
        new_v[2] = new_v[2].copy()
        new_v[1][col] = value
        new_v[2][col] = value
        # a window reaching either end of the knot range holds past it
        if t0 <= ts[0]:
            new_v[0] = new_v[0].copy()
            new_v[0][col] = value
        if t1 >= ts[-1]:
            new_v[3] = new_v[3].copy()
            new_v[3][col] = value
        for t, v in zip(ts[inside], self.values[inside]):
            v = v.copy()
            v[col] = value
            new_t.append(float(t))
            new_v.append(v)
        outside = ~inside
        # knots exactly at t0/t1 are replaced by the explicit left/right pairs
        outside &= (ts != t0) & (ts != t1)
        all_t = np.concatenate([ts[outside], new_t])
        all_v = np.vstack([self.values[outside], np.array(new_v)])
        # stable sort keeps the (left, right) order of the inserted pairs
        order = np.argsort(all_t, kind="stable")
        return PiecewiseLinear(all_t[order], all_v[order])


@dataclass
class ControlValues:
    """Controls frozen at one instant (nondimensional)."""

    alpha: np.ndarray   # per compressor
    demand: np.ndarray  # per demand node, withdrawal
    s: np.ndarray       # per slack node, density
    sdot: np.ndarray    # per slack node, d s / d t~


@dataclass
class ControlSignal:
    """Time-varying controls; knot times in hours."""

    alpha: PiecewiseLinear
    demand: PiecewiseLinear
    slack_density: PiecewiseLinear
    compressor_ids: list[str]

    @classmethod
    def constant(cls, network: GasNetwork, alpha=None, demand=None, s=None, horizon=24.0):
        if alpha is None:
            alpha = np.ones(network.n_compressors)
        if demand is None:
            demand = network.base_withdrawal[network.demand_idx]
        if s is None:
            s = network.slack_density
        return cls(PiecewiseLinear.constant(np.asarray(alpha, float).reshape(-1), 0.0, horizon),
                   PiecewiseLinear.constant(np.asarray(demand, float).reshape(-1), 0.0, horizon),
                   PiecewiseLinear.constant(np.asarray(s, float).reshape(-1), 0.0, horizon),
                   list(network.compressor_ids))

    def at(self, t: float, network: GasNetwork) -> ControlValues:
        return ControlValues(self.alpha(t), self.demand(t), self.slack_density(t),
                             self.slack_density.slope(t) * network.scaling.hours_per_unit)

    def breakpoints(self) -> np.ndarray:
        return np.unique(np.concatenate([self.alpha.times, self.demand.times, self.slack_density.times]))

    def jump_times(self) -> list[float]:
        return sorted(set(self.alpha.jump_times() + self.demand.jump_times() + self.slack_density.jump_times()))

    def replace(self, **kw) -> "ControlSignal":
        d = dict(alpha=self.alpha, demand=self.demand, slack_density=self.slack_density,
                 compressor_ids=self.compressor_ids)
        d.update(kw)
        return ControlSignal(**d)


@dataclass
class GasState:
    rho: np.ndarray   # demand-node densities
    flux: np.ndarray  # mid-pipe fluxes

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.flux = np.asarray(self.flux, dtype=float)
        if (self.rho <= 0).any():
            raise ValueError("densities must be positive")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.flux])

    @classmethod
    def from_vector(cls, x, network: GasNetwork) -> "GasState":
        return cls(x[: network.n_demand].copy(), x[network.n_demand:].copy())


def g(x, y):
    """Friction nonlinearity ``x |x| / y`` (elementwise)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("friction term needs positive density sums")
    return x * np.abs(x) / y


class _Model:
    """Precomputed index maps and matrices for one network."""

    def __init__(self, net: GasNetwork):
        self.net = net
        self.N = net.n_nodes
        self.P = net.n_pipes
        self.Nd = net.n_demand
        self.n = self.Nd + self.P
        self.fr = net.from_idx
        self.to = net.to_idx
        self.absA_d = np.abs(net.A_d)
        self.A_d = net.A_d
        self.XL = net.X * net.Lam
        self.X = net.X
        self.Lam = net.Lam
        self.K = net.K
        self.dem = net.demand_idx
        self.slk = net.slack_idx
        self.minus4AdX = -4.0 * net.A_d * net.X[None, :]
        # demand position of every node (-1 for slack)
        self.dpos = -np.ones(self.N, dtype=int)
        self.dpos[self.dem] = np.arange(self.Nd)

    def nodes(self, rho_d, s):
        r = np.empty(self.N)
        r[self.dem] = rho_d
        r[self.slk] = s
        return r

    def alpha_pipes(self, alpha_c):
        return self.net.alpha_per_pipe(alpha_c)

    def residual(self, xdot, x, u: ControlValues):
        Nd = self.Nd
        r = self.nodes(x[:Nd], u.s)
        rd = self.nodes(xdot[:Nd], u.sdot)
        phi = x[Nd:]
        a = self.alpha_pipes(u.alpha)
        ri = r[self.fr]
        rj = r[self.to]
        y = a * ri + rj
        if np.any(y <= 0):
            raise ValueError("non-positive density sum in friction term")
        ydot = a * rd[self.fr] + rd[self.to]
        out = np.empty(self.n)
        out[:Nd] = self.absA_d @ (self.XL * ydot) - 4.0 * (self.A_d @ (self.X * phi) - u.demand)
        out[Nd:] = xdot[Nd:] + (rj - a * ri) / self.Lam + self.K * phi * np.abs(phi) / y
        return out

    def jac_x(self, x, u: ControlValues):
        Nd = self.Nd
        r = self.nodes(x[:Nd], u.s)
        phi = x[Nd:]
        a = self.alpha_pipes(u.alpha)
        y = a * r[self.fr] + r[self.to]
        J = np.zeros((self.n, self.n))
        J[:Nd, Nd:] = self.minus4AdX
        gy = -self.K * phi * np.abs(phi) / y ** 2
        P = self.P
        rows = np.arange(P)
        # momentum row e depends on rho at from (coef -a/L + gy*a) and to (1/L + gy)
        cf = -a / self.Lam + gy * a
        ct = 1.0 / self.Lam + gy
        for coef, nodes in ((cf, self.fr), (ct, self.to)):
            k = self.dpos[nodes]
            m = k >= 0
            np.add.at(J, (Nd + rows[m], k[m]), coef[m])
        J[Nd + rows, Nd + rows] = 2.0 * self.K * np.abs(phi) / y
        return J

    def jac_xdot(self, u: ControlValues):
        Nd = self.Nd
        a = self.alpha_pipes(u.alpha)
        E = np.zeros((self.n, self.n))
        # |B_d^T| with alpha on from-nodes
        Bd = np.zeros((self.P, Nd))
        rows = np.arange(self.P)
        for coef, nodes in ((a, self.fr), (np.ones(self.P), self.to)):
            k = self.dpos[nodes]
            m = k >= 0
            np.add.at(Bd, (rows[m], k[m]), coef[m])
        E[:Nd, :Nd] = self.absA_d @ (self.XL[:, None] * Bd)
        E[Nd:, Nd:] = np.eye(self.P)
        return E


def _model(net: GasNetwork) -> _Model:
    m = net.__dict__.get("_tgf_model")
    if m is None:
        m = _Model(net)
        net.__dict__["_tgf_model"] = m
    return m


def _as_vec(x, net):
    return x.vector if isinstance(x, GasState) else np.asarray(x, dtype=float)


def dae_residual(xdot, x, u: ControlValues, network: GasNetwork) -> np.ndarray:
    """``F(xdot, x, u)`` for the lumped network (mass rows first, then momentum)."""
    return _model(network).residual(_as_vec(xdot, network), _as_vec(x, network), u)


def dae_jacobians(x, u: ControlValues, network: GasNetwork):
    """Analytic ``(dF/dx, dF/dxdot)``."""
    m = _model(network)
    return m.jac_x(_as_vec(x, network), u), m.jac_xdot(u)


def linepack_weight(network: GasNetwork, rho_all, alpha) -> float:
    """Demand-side weighted linepack ``1/4 * 1^T |A_d| X Lam |B^T| rho``.

    Its time derivative equals :func:`net_injection` whenever compressor ratios
    are constant.
    """
    m = _model(network)
    a = network.alpha_per_pipe(alpha)
    r = np.asarray(rho_all, dtype=float)
    y = a * r[network.from_idx] + r[network.to_idx]
    return 0.25 * float(np.sum(m.absA_d @ (m.XL * y)))


def net_injection(network: GasNetwork, flux, demand) -> float:
    """Net inflow into the demand-node region ``1^T A_d X Phi - 1^T d``."""
    return float(np.sum(network.A_d @ (network.X * np.asarray(flux))) - np.sum(demand))


def _initial_guess(net: GasNetwork, u: ControlValues):
    m = _model(net)
    phi, *_ = np.linalg.lstsq(net.A_d * net.X[None, :], u.demand, rcond=None)
    a = net.alpha_per_pipe(u.alpha)
    rho = np.full(net.n_nodes, np.nan)
    rho[net.slack_idx] = u.s
    drop = net.Lam * net.K * phi * np.abs(phi)
    changed = True
    while changed:
        changed = False
        for e in range(net.n_pipes):
            i, j = net.from_idx[e], net.to_idx[e]
            if not np.isnan(rho[i]) and np.isnan(rho[j]):
                rho[j] = math.sqrt(max((a[e] * rho[i]) ** 2 - drop[e], (0.3 * a[e] * rho[i]) ** 2))
                changed = True
            elif np.isnan(rho[i]) and not np.isnan(rho[j]):
                rho[i] = math.sqrt(max(rho[j] ** 2 + drop[e], 1e-12)) / a[e]
                changed = True
    rho[np.isnan(rho)] = float(np.mean(u.s))
    return np.concatenate([rho[m.dem], phi])


def solve_steady_state(network: GasNetwork, u: ControlValues, tol: float = 1e-10,
                       max_iter: int = 60, x0=None) -> GasState:
    """Newton solve of ``F(0, x, u) = 0`` with positivity-preserving damping."""
    m = _model(network)
    u = ControlValues(np.asarray(u.alpha, float), np.asarray(u.demand, float),
                      np.asarray(u.s, float), np.zeros_like(np.asarray(u.s, float)))
    zero = np.zeros(m.n)
    x = _initial_guess(network, u) if x0 is None else _as_vec(x0, network).copy()
    Nd = m.Nd

    def res(v):
        try:
            return m.residual(zero, v, u)
        except ValueError:
            return None

    F = res(x)
    if F is None:
        raise SteadyStateError("initial guess has non-positive densities")
    for it in range(max_iter):
        nrm = np.linalg.norm(F)
        if nrm < tol:
            return GasState.from_vector(x, network)
        J = m.jac_x(x, u)
        try:
            dx = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(J, F, rcond=None)[0]
        step = 1.0
        neg = dx[:Nd] < 0
        if neg.any():
            step = min(1.0, 0.9 * float(np.min(-x[:Nd][neg] / dx[:Nd][neg])))
        while step > 1e-10:
            xn = x + step * dx
            Fn = res(xn)
            if Fn is not None and (xn[:Nd] > 0).all() and np.linalg.norm(Fn) < (1 - 1e-4 * step) * nrm:
                break
            step *= 0.5
        else:
            raise SteadyStateError(f"line search failed at iteration {it} (residual {nrm:.3e})")
        x, F = xn, Fn
    if np.linalg.norm(F) < tol:
        return GasState.from_vector(x, network)
    raise SteadyStateError(f"Newton did not converge in {max_iter} iterations (residual {np.linalg.norm(F):.3e})")


@dataclass
class GasTrajectory:
    """Simulation output.  ``times`` in hours; ``rho`` holds all nodes (slack included)."""

    times: np.ndarray
    rho: np.ndarray
    flux: np.ndarray
    alpha: np.ndarray
    demand: np.ndarray
    step_times: np.ndarray
    step_states: np.ndarray
    controls: ControlSignal
    node_ids: list[str]
    warnings: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def state_at(self, t: float, network: GasNetwork) -> GasState:
        ts = self.step_times
        x = np.array([np.interp(t, ts, self.step_states[:, k]) for k in range(self.step_states.shape[1])])
        return GasState.from_vector(x, network)

    def pressure_pa(self, network: GasNetwork) -> np.ndarray:
        return network.pressure_pa(self.rho)

    @property
    def terminal(self) -> np.ndarray:
        return self.step_states[-1]


class BDFIntegrator:
    """Variable-step BDF (orders 1-2) with Newton corrector for ``F(xdot, x, u) = 0``.

    Steps land on every control knot; after a control jump the history is
    dropped and the method restarts at order 1.
    """

    def __init__(self, network: GasNetwork, controls: ControlSignal, rtol=DEFAULT_RTOL,
                 atol=DEFAULT_ATOL, max_step_h=OUTPUT_DT_H, max_order=2, newton_tol=1e-2,
                 max_newton=6, min_step_h=1e-9):
        self.net = network
        self.m = _model(network)
        self.u = controls
        self.rtol = rtol
        self.atol = atol
        self.to_nd = 3600.0 * network.scaling.c / network.scaling.length
        self.hmax = max_step_h * self.to_nd
        self.hmin = min_step_h * self.to_nd
        self.max_order = max_order
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        self.n_steps = 0
        self.n_rejected = 0
        self.n_newton_fail = 0

    def _wrms(self, v, x):
        w = self.atol + self.rtol * np.abs(x)
        return float(np.max(np.abs(v) / w))

    def _controls(self, tau):
        return self.u.at(tau / self.to_nd, self.net)

    def _xdot0(self, x, uv):
        E = self.m.jac_xdot(uv)
        return -np.linalg.solve(E, self.m.residual(np.zeros(self.m.n), x, uv))

    def run(self, x0, t0_h: float, t1_h: float):
        m = self.m
        tau = t0_h * self.to_nd
        tau_end = t1_h * self.to_nd
        bps = sorted(set(float(b) * self.to_nd for b in self.u.breakpoints()) | {tau_end})
        bps = [b for b in bps if b > tau]
        jumps = [j * self.to_nd for j in self.u.jump_times()]
        x = np.array(x0, dtype=float)
        hist = [(tau, x.copy())]
        xdot = self._xdot0(x, self._controls(tau))
        out_t = [tau]
        out_x = [x.copy()]
        h = min(self.hmax, max(tau_end - tau, 0.0), 0.05 * self.hmax if np.any(xdot) else self.hmax)
        h = max(h, self.hmin)
        bp_i = 0
        while tau < tau_end * (1 - 1e-14) - 1e-12:
            while bp_i < len(bps) and bps[bp_i] <= tau * (1 + 1e-14) + 1e-12:
                bp_i += 1
            tb = bps[bp_i] if bp_i < len(bps) else tau_end
            h = min(h, self.hmax, tb - tau)
            if tb - (tau + h) < 1e-3 * h:
                h = tb - tau
            tn = tau + h
            on_knot = tn == tb
            uv = self._controls(tn)
            k = 2 if (len(hist) >= 3 and self.max_order >= 2) else 1
            # predictor and BDF coefficients
            if len(hist) == 1:
                x_pred = x + h * xdot
                c0, rest, efac = 1.0, -x, 0.5
            elif k == 1:
                (t1, x1), (t2, x2) = hist[-2], hist[-1]
                x_pred = x2 + (x2 - x1) * (h / (t2 - t1))
                c0, rest, efac = 1.0, -x2, h / (2 * h + (t2 - t1))
            else:
                (ta, xa), (tb_, xb), (tc, xc) = hist[-3], hist[-2], hist[-1]
                # quadratic extrapolation through the last three points
                la = (tn - tb_) * (tn - tc) / ((ta - tb_) * (ta - tc))
                lb = (tn - ta) * (tn - tc) / ((tb_ - ta) * (tb_ - tc))
                lc = (tn - ta) * (tn - tb_) / ((tc - ta) * (tc - tb_))
                x_pred = la * xa + lb * xb + lc * xc
                w = h / (tc - tb_)
                c0 = (1 + 2 * w) / (1 + w)
                rest = -(1 + w) * xc + w * w / (1 + w) * xb
                efac = h / (tn - ta)
            xn = x_pred.copy()
            ok = False
            try:
                J = m.jac_x(xn, uv) + (c0 / h) * m.jac_xdot(uv)
                lu = scipy.linalg.lu_factor(J, check_finite=False)
                for _ in range(self.max_newton):
                    G = m.residual((c0 * xn + rest) / h, xn, uv)
                    dx = -scipy.linalg.lu_solve(lu, G, check_finite=False)
                    xn = xn + dx
                    if self._wrms(dx, xn) < self.newton_tol:
                        ok = True
                        break
            except (ValueError, np.linalg.LinAlgError):
                ok = False
            if not ok:
                self.n_newton_fail += 1
                h *= 0.25
                if h < self.hmin:
                    raise IntegrationError(f"Newton failure with step below minimum at t={tau / self.to_nd:.6f} h")
                continue
            err = self._wrms(efac * (xn - x_pred), xn)
            if err > 1.0:
                self.n_rejected += 1
                h *= max(0.2, 0.9 * err ** (-1.0 / (k + 1)))
                if h < self.hmin:
                    raise IntegrationError(f"step size underflow at t={tau / self.to_nd:.6f} h")
                continue
            # accept
            self.n_steps += 1
            xdot = (c0 * xn + rest) / h
            tau = tn
            x = xn
            out_t.append(tau)
            out_x.append(x.copy())
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** (-1.0 / (k + 1))))
            if on_knot:
                # controls have a kink or jump here: drop the history
                uv = self._controls(tau)
                hist = [(tau, x.copy())]
                xdot = self._xdot0(x, uv)
                if any(abs(tau - j) <= 1e-9 * max(1.0, tau) for j in jumps):
                    h = min(h, 0.05 * self.hmax)
                    continue
            else:
                hist.append((tau, x.copy()))
                if len(hist) > 3:
                    hist.pop(0)
            h *= fac
        return np.array(out_t) / self.to_nd, np.array(out_x)


def output_grid(t0: float, t1: float, dt: float = OUTPUT_DT_H) -> np.ndarray:
    k0 = math.floor(t0 / dt + 1e-9) + 1
    k1 = math.floor(t1 / dt + 1e-9)
    inner = np.arange(k0, k1 + 1) * dt
    inner = inner[(inner > t0 + 1e-12) & (inner < t1 - 1e-12)]
    return np.concatenate([[t0], inner, [t1]])


def _demand_warnings(network: GasNetwork, u: ControlSignal, t0, t1) -> list[str]:
    warns = []
    lo = network.d_min[network.demand_idx]
    hi = network.d_max[network.demand_idx]
    knots = u.demand.times[(u.demand.times >= t0) & (u.demand.times <= t1)]
    for t in np.concatenate([[t0], knots, [t1]]):
        d = u.demand(t)
        bad = np.flatnonzero((d < lo - 1e-12) | (d > hi + 1e-12))
        for k in bad:
            nid = network.node_ids[network.demand_idx[k]]
            msg = f"withdrawal at node {nid} outside bounds at t={t:.4f} h"
            if msg not in warns:
                warns.append(msg)
    return warns


def integrate(network: GasNetwork, x0, u: ControlSignal, T: float, rtol: float = DEFAULT_RTOL,
              atol: float = DEFAULT_ATOL, t0: float = 0.0, output_dt: float = OUTPUT_DT_H,
              max_step_h: float | None = None) -> GasTrajectory:
    """Simulate from ``x0`` at ``t0`` to ``T`` (hours) under ``u``."""
    if T <= t0:
        raise ValueError("T must exceed t0")
    x0 = _as_vec(x0, network)
    m = _model(network)
    uv0 = u.at(t0, network)
    res0 = m.residual(np.zeros(m.n), x0, uv0)  # raises on unphysical densities
    if not np.all(np.isfinite(res0)):
        raise ValueError("inconsistent initial state")
    warns = _demand_warnings(network, u, t0, T)
    for w in warns:
        log.warning(w)
    integ = BDFIntegrator(network, u, rtol=rtol, atol=atol,
                          max_step_h=output_dt if max_step_h is None else max_step_h)
    st, sx = integ.run(x0, t0, T)
    grid = output_grid(t0, T, output_dt)
    xs = np.column_stack([np.interp(grid, st, sx[:, k]) for k in range(sx.shape[1])])
    Nd = m.Nd
    rho = np.empty((len(grid), m.N))
    rho[:, m.dem] = xs[:, :Nd]
    slack = u.slack_density.sample(grid)
    rho[:, m.slk] = slack
    return GasTrajectory(
        times=grid,
        rho=rho,
        flux=xs[:, Nd:],
        alpha=u.alpha.sample(grid),
        demand=u.demand.sample(grid),
        step_times=st,
        step_states=sx,
        controls=u,
        node_ids=list(network.node_ids),
        warnings=warns,
        stats={"steps": integ.n_steps, "rejected": integ.n_rejected, "newton_failures": integ.n_newton_fail},
    )


def apply_contingency(u: ControlSignal, w: ContingencyWindow) -> ControlSignal:
    """Force the targeted compressor's ratio to 1 on ``[t_start, t_end]``."""
    if w.compressor_id not in u.compressor_ids:
        raise KeyError(f"unknown compressor {w.compressor_id!r}")
    col = u.compressor_ids.index(w.compressor_id)
    return u.replace(alpha=u.alpha.with_column_override(col, w.t_start, w.t_end, 1.0))


def apply_contingencies(u: ControlSignal, windows) -> ControlSignal:
    for w in windows:
        u = apply_contingency(u, w)
    return u


@dataclass(frozen=True)
class PressureViolation:
    node_id: str
    t_start: float
    t_end: float
    worst_density: float  # nondimensional
    worst_time: float


def _crossing(t0, v0, t1, v1, level):
    if v1 == v0:
        return t0
    return t0 + (level - v0) * (t1 - t0) / (v1 - v0)


def min_pressure_violations(traj: GasTrajectory, network: GasNetwork) -> list[PressureViolation]:
    """Maximal intervals on the output grid where a node density sits below its minimum."""
    out = []
    t = traj.times
    for i in network.demand_idx:
        lo = network.rho_min[i]
        r = traj.rho[:, i]
        below = r < lo
        if not below.any():
            continue
        k = 0
        n = len(t)
        while k < n:
            if not below[k]:
                k += 1
                continue
            j = k
            while j + 1 < n and below[j + 1]:
                j += 1
            a = t[k] if k == 0 else _crossing(t[k - 1], r[k - 1], t[k], r[k], lo)
            b = t[j] if j == n - 1 else _crossing(t[j], r[j], t[j + 1], r[j + 1], lo)
            seg = slice(k, j + 1)
            w = int(np.argmin(r[seg])) + k
            out.append(PressureViolation(network.node_ids[i], float(a), float(b), float(r[w]), float(t[w])))
            k = j + 1
    return sorted(out, key=lambda v: (v.t_start, v.node_id))
