"""Primal-dual interior-point method for smooth equality-constrained NLPs with bounds.

    min f(x)  s.t.  c(x) = 0,  lb <= x <= ub

Barrier subproblems are solved by Newton steps on the primal-dual KKT system
with a filter line search, second-order correction, and a feasibility
restoration phase that doubles as an infeasibility detector.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


@dataclass
class NLPProblem:
    n: int
    m: int
    x0: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    objective: Callable
    gradient: Callable
    constraints: Callable
    jacobian: Callable                    # x -> sparse (m, n)
    hessian: Callable                     # (x, lam, obj_factor) -> sparse symmetric (n, n)


@dataclass
class IPOptions:
    tol: float = 1e-6
    max_iter: int = 500
    mu_init: float = 0.1
    mu_factor: float = 0.2
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    infeasibility_tol: float = 1e-5
    max_restorations: int = 20
    verbose: bool = False


@dataclass
class IPResult:
    x: np.ndarray
    lam: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    status: str                 # optimal | max_iter | infeasible
    iterations: int
    objective: float
    stationarity: float
    feasibility: float
    complementarity: float
    log: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "optimal"


class _Stop(Exception):
    pass


def _push_interior(x, lb, ub, k1, k2):
    x = np.array(x, dtype=float)
    fl = np.isfinite(lb)
    fu = np.isfinite(ub)
    both = fl & fu
    pl = np.where(fl, k1 * np.maximum(1.0, np.abs(lb)), 0.0)
    pu = np.where(fu, k1 * np.maximum(1.0, np.abs(ub)), 0.0)
    width = np.where(both, ub - lb, np.inf)
    pl = np.minimum(pl, k2 * width)
    pu = np.minimum(pu, k2 * width)
    lo = np.where(fl, lb + pl, -np.inf)
    hi = np.where(fu, ub - pu, np.inf)
    # degenerate intervals get the midpoint
    mid = both & (lo >= hi)
    x = np.clip(x, lo, hi)
    x[mid] = 0.5 * (lb[mid] + ub[mid])
    return x


class InteriorPointSolver:
    def __init__(self, problem: NLPProblem, options: IPOptions | None = None,
                 stop_test: Callable | None = None, tag: str = "main"):
        self.p = problem
        self.o = options or IPOptions()
        self.stop_test = stop_test
        self.tag = tag
        self.fl = np.isfinite(problem.lb)
        self.fu = np.isfinite(problem.ub)
        self.delta_w_last = 0.0
        self.log = []

    # ------------------------------------------------------------------ helpers
    def _slacks(self, x):
        sl = np.where(self.fl, x - self.p.lb, 1.0)
        su = np.where(self.fu, self.p.ub - x, 1.0)
        return sl, su

    def _barrier(self, x, f, mu):
        sl, su = self._slacks(x)
        if (sl[self.fl] <= 0).any() or (su[self.fu] <= 0).any():
            return math.inf
        return f - mu * (np.sum(np.log(sl[self.fl])) + np.sum(np.log(su[self.fu])))

    def _barrier_grad(self, x, g, mu):
        sl, su = self._slacks(x)
        return g - mu * np.where(self.fl, 1.0 / sl, 0.0) + mu * np.where(self.fu, 1.0 / su, 0.0)

    def _errors(self, x, g, c, J, lam, zl, zu, mu):
        stat = g + J.T @ lam - zl + zu
        sl, su = self._slacks(x)
        comp = np.concatenate([(sl * zl - mu)[self.fl], (su * zu - mu)[self.fu]])
        return (float(np.max(np.abs(stat), initial=0.0)),
                float(np.max(np.abs(c), initial=0.0)),
                float(np.max(np.abs(comp), initial=0.0)))

    def _scaled_error(self, x, g, c, J, lam, zl, zu, mu):
        st, fe, co = self._errors(x, g, c, J, lam, zl, zu, mu)
        n_mult = self.p.m + int(self.fl.sum()) + int(self.fu.sum())
        smax = 100.0
        tot = np.sum(np.abs(lam)) + np.sum(np.abs(zl[self.fl])) + np.sum(np.abs(zu[self.fu]))
        sd = max(smax, tot / max(n_mult, 1)) / smax
        nz = int(self.fl.sum()) + int(self.fu.sum())
        sc = max(smax, (np.sum(np.abs(zl[self.fl])) + np.sum(np.abs(zu[self.fu]))) / max(nz, 1)) / smax
        return max(st / sd, fe, co / sc)

    def _solve_kkt(self, W, J, sigma, rhs_x, rhs_c):
        n, m = self.p.n, self.p.m
        delta_w = 0.0
        delta_c = 0.0
        attempts = 0
        while True:
            H = W + sp.diags(sigma + delta_w)
            if m:
                C = -delta_c * sp.eye(m) if delta_c else None
                K = sp.bmat([[H, J.T], [J, C]], format="csc")
                rhs = np.concatenate([rhs_x, rhs_c])
            else:
                K = H.tocsc()
                rhs = rhs_x
            ok = True
            try:
                lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)
                sol = lu.solve(rhs)
                if not np.all(np.isfinite(sol)):
                    ok = False
            except RuntimeError:
                ok = False
            if not ok:
                if m and delta_c == 0.0:
                    delta_c = 1e-8
                    continue
            else:
                dx = sol[:n]
                curv = float(dx @ (H @ dx))
                if curv >= 1e-12 * float(dx @ dx) or float(dx @ dx) < 1e-30:
                    if delta_w > 0:
                        self.delta_w_last = delta_w
                    return sol, delta_w
            attempts += 1
            if attempts > 40:
                raise np.linalg.LinAlgError("KKT regularization failed")
            if delta_w == 0.0:
                delta_w = 1e-4 if self.delta_w_last == 0.0 else max(1e-20, self.delta_w_last / 3.0)
            else:
                delta_w *= 8.0 if self.delta_w_last else 100.0

    def _ftb(self, v, dv, tau):
        neg = dv < 0
        if not neg.any():
            return 1.0
        return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))

    # ------------------------------------------------------------------ main loop
    def solve(self) -> IPResult:
        p, o = self.p, self.o
        x = _push_interior(p.x0, p.lb, p.ub, o.bound_push, o.bound_frac)
        zl = np.where(self.fl, 1.0, 0.0)
        zu = np.where(self.fu, 1.0, 0.0)
        mu = o.mu_init
        f = p.objective(x)
        g = p.gradient(x)
        c = p.constraints(x)
        J = sp.csr_matrix(p.jacobian(x)) if p.m else sp.csr_matrix((0, p.n))
        lam = np.zeros(p.m)
        if p.m:
            try:
                A = sp.bmat([[sp.eye(p.n), J.T], [J, None]], format="csc")
                sol = spla.splu(A).solve(np.concatenate([-(g - zl + zu), np.zeros(p.m)]))
                if np.all(np.isfinite(sol)) and np.max(np.abs(sol[p.n:])) <= 1e3:
                    lam = sol[p.n:]
            except RuntimeError:
                pass
        theta0 = float(np.sum(np.abs(c)))
        theta_max = 1e4 * max(1.0, theta0)
        theta_min = 1e-4 * max(1.0, theta0)
        filt: list[tuple[float, float]] = []
        n_rest = 0
        status = "max_iter"
        it = 0
        for it in range(o.max_iter + 1):
            st, fe, co = self._errors(x, g, c, J, lam, zl, zu, 0.0)
            self.log.append({"iter": it, "objective": f, "mu": mu, "stationarity": st,
                             "feasibility": fe, "complementarity": co, "delta_w": self.delta_w_last})
            if o.verbose:
                log.info("%s it=%d f=%.6e mu=%.1e st=%.2e fe=%.2e co=%.2e", self.tag, it, f, mu, st, fe, co)
            if self.stop_test is not None and self.stop_test(x, c):
                raise _Stop(x)
            if st <= o.tol and fe <= o.tol and co <= o.tol:
                status = "optimal"
                break
            if it == o.max_iter:
                break
            # barrier parameter update
            while mu > o.tol / 10 and self._scaled_error(x, g, c, J, lam, zl, zu, mu) <= o.kappa_eps * mu:
                mu = max(o.tol / 10, o.mu_factor * mu)
                filt = []
            tau = max(o.tau_min, 1.0 - mu)
            sl, su = self._slacks(x)
            sigma = np.where(self.fl, zl / sl, 0.0) + np.where(self.fu, zu / su, 0.0)
            W = sp.csr_matrix(p.hessian(x, lam, 1.0))
            gphi = self._barrier_grad(x, g, mu)
            rhs_x = -(gphi + J.T @ lam)
            try:
                sol, dw = self._solve_kkt(W, J, sigma, rhs_x, -c)
            except np.linalg.LinAlgError:
                status = "max_iter"
                break
            dx = sol[: p.n]
            dlam = sol[p.n:]
            dzl = np.where(self.fl, (mu - zl * dx) / sl - zl, 0.0)
            dzu = np.where(self.fu, (mu + zu * dx) / su - zu, 0.0)
            amax = min(self._ftb(sl[self.fl], dx[self.fl], tau), self._ftb(su[self.fu], -dx[self.fu], tau))
            az = min(self._ftb(zl[self.fl], dzl[self.fl], tau), self._ftb(zu[self.fu], dzu[self.fu], tau))

            # filter line search
            theta = float(np.sum(np.abs(c)))
            phi = self._barrier(x, f, mu)
            dphi = float(gphi @ dx)
            amin = 1e-10
            alpha = amax
            accepted = False
            first = True
            while alpha >= amin:
                xt = x + alpha * dx
                ft = p.objective(xt)
                ct = p.constraints(xt)
                tht = float(np.sum(np.abs(ct)))
                pht = self._barrier(xt, ft, mu)
                ok, ftype = self._acceptable(theta, phi, dphi, alpha, tht, pht, filt, theta_min, theta_max)
                if not ok and first and tht >= theta and p.m:
                    # second-order correction
                    try:
                        sol2, _ = self._solve_kkt(W, J, sigma, rhs_x, -(alpha * c + ct))
                        dxs = sol2[: p.n]
                        a2 = min(self._ftb(sl[self.fl], dxs[self.fl], tau), self._ftb(su[self.fu], -dxs[self.fu], tau))
                        xs = x + a2 * dxs
                        fs = p.objective(xs)
                        cs = p.constraints(xs)
                        ths = float(np.sum(np.abs(cs)))
                        phs = self._barrier(xs, fs, mu)
                        ok2, ftype2 = self._acceptable(theta, phi, dphi, alpha, ths, phs, filt, theta_min, theta_max)
                        if ok2:
                            xt, ft, ct, tht, pht, ftype = xs, fs, cs, ths, phs, ftype2
                            ok = True
                            dlam_s = sol2[p.n:]
                            dlam = dlam_s
                    except np.linalg.LinAlgError:
                        pass
                first = False
                if ok:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                n_rest += 1
                if n_rest > o.max_restorations:
                    status = "infeasible"
                    break
                filt.append(((1 - 1e-5) * theta, phi - 1e-8 * theta))
                res = self._restore(x, c, theta, filt, mu)
                if res is None:
                    status = "infeasible"
                    break
                x = res
                f = p.objective(x)
                g = p.gradient(x)
                c = p.constraints(x)
                J = sp.csr_matrix(p.jacobian(x))
                sl, su = self._slacks(x)
                zl = np.where(self.fl, mu / sl, 0.0)
                zu = np.where(self.fu, mu / su, 0.0)
                lam = self._ls_multipliers(g, J, zl, zu, lam)
                continue
            if not ftype:
                filt.append(((1 - 1e-5) * theta, phi - 1e-8 * theta))
            x = xt
            lam = lam + alpha * dlam
            zl = zl + az * dzl
            zu = zu + az * dzu
            # keep bound multipliers close to their barrier values
            sl, su = self._slacks(x)
            ks = 1e10
            zl = np.where(self.fl, np.clip(zl, mu / (ks * sl), ks * mu / sl), 0.0)
            zu = np.where(self.fu, np.clip(zu, mu / (ks * su), ks * mu / su), 0.0)
            f = ft
            c = ct
            g = p.gradient(x)
            J = sp.csr_matrix(p.jacobian(x)) if p.m else J
        st, fe, co = self._errors(x, g, c, J, lam, zl, zu, 0.0)
        return IPResult(x, lam, zl, zu, status, it, float(f), st, fe, co, self.log)

    def _acceptable(self, theta, phi, dphi, alpha, tht, pht, filt, theta_min, theta_max):
        if not math.isfinite(pht) or tht > theta_max:
            return False, False
        for (ft, fp) in filt:
            if tht >= ft and pht >= fp:
                return False, False
        switching = dphi < 0 and alpha * (-dphi) ** 2.3 > theta ** 1.1
        if switching and theta <= theta_min:
            return pht <= phi + 1e-4 * alpha * dphi, True
        return (tht <= (1 - 1e-5) * theta or pht <= phi - 1e-8 * theta), False

    def _ls_multipliers(self, g, J, zl, zu, fallback):
        p = self.p
        if not p.m:
            return fallback
        try:
            A = sp.bmat([[sp.eye(p.n), J.T], [J, None]], format="csc")
            sol = spla.splu(A).solve(np.concatenate([-(g - zl + zu), np.zeros(p.m)]))
            if np.all(np.isfinite(sol)) and np.max(np.abs(sol[p.n:])) <= 1e3:
                return sol[p.n:]
        except RuntimeError:
            pass
        return np.zeros(p.m)

    def _restore(self, x, c, theta, filt, mu):
        """Reduce ``||c||`` from ``x`` within the bounds; None if stuck at an infeasible point."""
        p, o = self.p, self.o
        target = 0.9 * theta

        def stop(xr, _):
            cr = p.constraints(xr)
            th = float(np.sum(np.abs(cr)))
            if th > target:
                return False
            ph = self._barrier(xr, p.objective(xr), mu)
            return all(not (th >= ft and ph >= fp) for ft, fp in filt)

        def obj(xr):
            cr = p.constraints(xr)
            return 0.5 * float(cr @ cr)

        def grad(xr):
            return sp.csr_matrix(p.jacobian(xr)).T @ p.constraints(xr)

        def hess(xr, _lam, of):
            Jr = sp.csr_matrix(p.jacobian(xr))
            return of * (Jr.T @ Jr)

        rp = NLPProblem(p.n, 0, x.copy(), p.lb, p.ub, obj, grad,
                        lambda xr: np.zeros(0), lambda xr: sp.csr_matrix((0, p.n)), hess)
        ropt = IPOptions(tol=min(o.tol, 1e-8), max_iter=200, mu_init=max(mu, 1e-4), bound_push=1e-8,
                         bound_frac=1e-8, verbose=o.verbose)
        solver = InteriorPointSolver(rp, ropt, stop_test=stop, tag="restoration")
        try:
            r = solver.solve()
        except _Stop as s:
            xr = s.args[0]
            self.log.append({"restoration": True, "theta": float(np.sum(np.abs(p.constraints(xr))))})
            return xr
        cr = p.constraints(r.x)
        self.log.append({"restoration": True, "theta": float(np.sum(np.abs(cr))), "failed": True})
        if np.max(np.abs(cr), initial=0.0) > o.infeasibility_tol:
            return None
        return r.x


def solve_nlp(problem: NLPProblem, options: IPOptions | None = None) -> IPResult:
    return InteriorPointSolver(problem, options).solve()
