"""Small sparse LP builder with row families, solved by HiGHS through scipy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp


@dataclass
class LPResult:
    status: str            # optimal | infeasible | unbounded | error
    x: np.ndarray | None
    objective: float
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _vec(v, count):
    return np.broadcast_to(np.asarray(v, dtype=float).ravel() if np.ndim(v) else np.asarray(v, dtype=float),
                           (count,)).tolist()


class LinearProgram:
    """``min c^T x  s.t.  lo <= A x <= hi,  lb <= x <= ub`` assembled block by block."""

    def __init__(self):
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.cost: list[float] = []
        self._r: list[np.ndarray] = []
        self._c: list[np.ndarray] = []
        self._v: list[np.ndarray] = []
        self.row_lo: list[float] = []
        self.row_hi: list[float] = []
        self.row_family: list[str] = []
        self._A = None

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_rows(self) -> int:
        return len(self.row_lo)

    def add_variables(self, shape, lb=0.0, ub=np.inf, cost=0.0) -> np.ndarray:
        count = int(np.prod(shape))
        start = self.n_vars
        self.lb.extend(_vec(lb, count))
        self.ub.extend(_vec(ub, count))
        self.cost.extend(_vec(cost, count))
        self._A = None
        return np.arange(start, start + count).reshape(shape)

    def add_rows(self, rows, cols, vals, lo, hi, family: str, n_new: int) -> np.ndarray:
        """Append ``n_new`` rows given in local row numbering ``0..n_new-1``."""
        start = self.n_rows
        self._r.append(np.asarray(rows, dtype=np.int64) + start)
        self._c.append(np.asarray(cols, dtype=np.int64))
        self._v.append(np.asarray(vals, dtype=float))
        self.row_lo.extend(np.broadcast_to(np.asarray(lo, float), (n_new,)).tolist())
        self.row_hi.extend(np.broadcast_to(np.asarray(hi, float), (n_new,)).tolist())
        self.row_family.extend([family] * n_new)
        self._A = None
        return np.arange(start, start + n_new)

    def add_row(self, cols, vals, lo, hi, family: str) -> int:
        cols = np.atleast_1d(cols)
        return int(self.add_rows(np.zeros(len(cols), dtype=int), cols, vals, lo, hi, family, 1)[0])

    def matrix(self) -> sp.csr_matrix:
        if self._A is None:
            if self._r:
                r = np.concatenate(self._r)
                c = np.concatenate(self._c)
                v = np.concatenate(self._v)
            else:
                r = c = np.zeros(0, dtype=np.int64)
                v = np.zeros(0)
            self._A = sp.csr_matrix((v, (r, c)), shape=(self.n_rows, self.n_vars))
        return self._A

    def families(self) -> list[str]:
        return sorted(set(self.row_family))

    def solve(self, lb=None, ub=None, cost=None, integrality=None, rows=None) -> LPResult:
        """Solve with optional bound/cost overrides; ``rows`` restricts to a row subset."""
        A = self.matrix()
        lo = np.asarray(self.row_lo)
        hi = np.asarray(self.row_hi)
        if rows is not None:
            A = A[rows]
            lo = lo[rows]
            hi = hi[rows]
        c = np.asarray(self.cost if cost is None else cost, dtype=float)
        lbv = np.asarray(self.lb if lb is None else lb, dtype=float)
        ubv = np.asarray(self.ub if ub is None else ub, dtype=float)
        if np.any(lbv > ubv):
            return LPResult("infeasible", None, np.inf, "crossed variable bounds")
        cons = [LinearConstraint(A, lo, hi)] if A.shape[0] else []
        res = milp(c, integrality=integrality, bounds=Bounds(lbv, ubv), constraints=cons,
                   options={"presolve": True})
        if res.status == 0 and res.x is not None:
            return LPResult("optimal", np.asarray(res.x), float(res.fun), res.message)
        if res.status == 2:
            return LPResult("infeasible", None, np.inf, res.message)
        if res.status == 3:
            return LPResult("unbounded", None, -np.inf, res.message)
        return LPResult("error", None, np.nan, res.message)

    def elastic(self, families) -> tuple["LinearProgram", np.ndarray]:
        """Copy where rows of ``families`` get nonnegative violation slacks; cost = total slack."""
        fam = set(families)
        out = LinearProgram()
        out.lb = list(self.lb)
        out.ub = list(self.ub)
        out.cost = [0.0] * self.n_vars
        A = self.matrix().tocoo()
        out._r = [A.row.astype(np.int64)]
        out._c = [A.col.astype(np.int64)]
        out._v = [A.data.copy()]
        out.row_lo = list(self.row_lo)
        out.row_hi = list(self.row_hi)
        out.row_family = list(self.row_family)
        idx = [i for i, f in enumerate(self.row_family) if f in fam]
        k = len(idx)
        sp_ = out.add_variables(k, 0.0, np.inf, 1.0)
        sm = out.add_variables(k, 0.0, np.inf, 1.0)
        out._r.append(np.array(idx + idx, dtype=np.int64))
        out._c.append(np.concatenate([sp_, sm]).astype(np.int64))
        out._v.append(np.concatenate([np.ones(k), -np.ones(k)]))
        out._A = None
        return out, np.concatenate([sp_, sm])
