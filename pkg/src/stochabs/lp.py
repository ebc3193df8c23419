"""Small dense linear-program solver.

Two-phase primal simplex on a full tableau with bounded variables, so box
constraints never become rows.  Pricing is Dantzig's rule until a run of
degenerate pivots shows up, after which Bland's smallest-index rule takes over
for both the entering and the leaving choice, which rules out cycling.  The
pivot loop is compiled with numba.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9
DEGENERATE_RUN = 8


class SolverStall(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """``c @ x`` subject to ``A[i] @ x (<=|>=|=) b[i]`` and ``lb <= x <= ub``."""

    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = [str(s) for s in self.senses]
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.A.shape[0] != self.b.size or len(self.senses) != self.b.size:
            raise ValueError("row counts of A, senses and b differ")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must match the number of variables")
        if any(s not in ("<=", ">=", "=") for s in self.senses):
            raise ValueError(f"unknown constraint sense in {self.senses}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("coefficients must be finite")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub")

    @property
    def n_vars(self):
        return self.c.size

    def violation(self, x) -> float:
        """Largest constraint violation of point ``x``."""
        x = np.asarray(x, dtype=float)
        worst = max(0.0, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        if self.b.size:
            r = self.A @ x - self.b
            for ri, s in zip(r, self.senses):
                v = ri if s == "<=" else (-ri if s == ">=" else abs(ri))
                worst = max(worst, float(v))
        return worst


@dataclass
class LPResult:
    status: str
    value: float | None = None
    x: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@njit(cache=True)
def _simplex_loop(tab, xB, basis, upper, at_upper, is_basic, allowed, cost, iterations, max_iter):
    """Primal simplex pivots on a bounded-variable tableau, in place.

    Returns ``(status, iterations)`` with status 0 optimal, 1 unbounded,
    2 iteration cap reached.
    """
    m, n = tab.shape
    d = cost.copy()
    for r in range(m):
        cb = cost[basis[r]]
        if cb != 0.0:
            for k in range(n):
                d[k] -= cb * tab[r, k]
    degenerate = 0
    ratios = np.empty(m)
    while True:
        if iterations >= max_iter:
            return 2, iterations
        bland = degenerate >= DEGENERATE_RUN
        j = -1
        best = PIVOT_TOL
        for k in range(n):
            if is_basic[k] or not allowed[k]:
                continue
            g = d[k] if at_upper[k] else -d[k]
            if g > best:
                j = k
                if bland:
                    break
                best = g
        if j < 0:
            return 0, iterations
        direction = -1.0 if at_upper[j] else 1.0

        t_rows = np.inf
        for r in range(m):
            a = direction * tab[r, j]
            if a > PIVOT_TOL:
                v = xB[r] / a
            elif a < -PIVOT_TOL:
                v = (upper[basis[r]] - xB[r]) / (-a)
            else:
                v = np.inf
            if v < 0.0:
                v = 0.0
            ratios[r] = v
            if v < t_rows:
                t_rows = v
        t_flip = upper[j]
        iterations += 1

        if t_rows == np.inf and t_flip == np.inf:
            return 1, iterations
        if t_flip <= t_rows:
            for r in range(m):
                xB[r] -= direction * tab[r, j] * t_flip
            at_upper[j] = not at_upper[j]
            degenerate = 0
            continue

        t = t_rows
        # among tied rows: smallest basic index under Bland, else the largest pivot
        r_out = -1
        for r in range(m):
            if ratios[r] <= t + PIVOT_TOL:
                if r_out < 0:
                    r_out = r
                elif bland:
                    if basis[r] < basis[r_out]:
                        r_out = r
                elif abs(tab[r, j]) > abs(tab[r_out, j]):
                    r_out = r
        degenerate = degenerate + 1 if t <= PIVOT_TOL else 0

        entering_value = (upper[j] if at_upper[j] else 0.0) + direction * t
        alpha_out = direction * tab[r_out, j]
        leaving = basis[r_out]
        for r in range(m):
            xB[r] -= direction * tab[r, j] * t
        at_upper[leaving] = alpha_out < 0
        is_basic[leaving] = False

        piv = tab[r_out, j]
        for k in range(n):
            tab[r_out, k] /= piv
        for r in range(m):
            if r != r_out:
                f = tab[r, j]
                if f != 0.0:
                    for k in range(n):
                        tab[r, k] -= f * tab[r_out, k]
        f = d[j]
        for k in range(n):
            d[k] -= f * tab[r_out, k]

        basis[r_out] = j
        is_basic[j] = True
        at_upper[j] = False
        xB[r_out] = entering_value
        for r in range(m):
            ub = upper[basis[r]]
            if xB[r] < 0.0:
                xB[r] = 0.0
            elif xB[r] > ub:
                xB[r] = ub


@dataclass
class _Tableau:
    tab: np.ndarray
    xB: np.ndarray
    basis: np.ndarray
    upper: np.ndarray
    at_upper: np.ndarray
    is_basic: np.ndarray
    iterations: int = 0
    max_iter: int = 10_000
    allowed: np.ndarray = field(default=None)

    def values(self) -> np.ndarray:
        x = np.where(self.at_upper, self.upper, 0.0)
        x[self.basis] = self.xB
        return x

    def pivot(self, r, j):
        row = self.tab[r] / self.tab[r, j]
        self.tab -= np.outer(self.tab[:, j], row)
        self.tab[r] = row

    def run(self, cost) -> str:
        # the compiled loop updates the arrays in place, so they must be contiguous
        self.tab = np.ascontiguousarray(self.tab)
        self.xB = np.ascontiguousarray(self.xB, dtype=float)
        self.basis = np.ascontiguousarray(self.basis, dtype=np.int64)
        status, self.iterations = _simplex_loop(self.tab, self.xB, self.basis, self.upper, self.at_upper,
                                                self.is_basic, self.allowed, np.asarray(cost, dtype=float),
                                                self.iterations, self.max_iter)
        if status == 2:
            raise SolverStall(f"no convergence after {self.iterations} pivots")
        return "optimal" if status == 0 else "unbounded"


def _standard_form(lp: LinearProgram):
    """Rewrite as ``min c x, A x = b >= 0, 0 <= x <= u`` with ``x_orig = o + T x``."""
    n = lp.n_vars
    cols, offset = [], np.zeros(n)
    upper = []
    for i in range(n):
        lo, hi = lp.lb[i], lp.ub[i]
        if np.isfinite(lo):
            offset[i] = lo
            cols.append((i, 1.0))
            upper.append(hi - lo)
        elif np.isfinite(hi):
            offset[i] = hi
            cols.append((i, -1.0))
            upper.append(np.inf)
        else:
            cols.append((i, 1.0))
            upper.append(np.inf)
            cols.append((i, -1.0))
            upper.append(np.inf)
    T = np.zeros((n, len(cols)))
    for k, (i, sgn) in enumerate(cols):
        T[i, k] = sgn

    A = lp.A @ T
    b = lp.b - lp.A @ offset
    m = b.size
    slack_cols = []
    for r, s in enumerate(lp.senses):
        if s != "=":
            col = np.zeros(m)
            col[r] = 1.0 if s == "<=" else -1.0
            slack_cols.append(col)
    n_slack = len(slack_cols)
    if n_slack:
        A = np.hstack([A, np.column_stack(slack_cols)])
    upper = np.concatenate([np.asarray(upper, dtype=float), np.full(n_slack, np.inf)])
    c = np.concatenate([lp.c @ T, np.zeros(n_slack)])
    flip = b < 0
    A[flip] *= -1
    b = np.abs(b)
    return A, b, c, upper, T, offset


class StandardForm:
    """``lp`` rewritten once so that only the objective changes between solves."""

    def __init__(self, lp: LinearProgram, max_iter: int = 10_000):
        self.lp = lp
        self.A, self.b, self._c, self.upper, self.T, self.offset = _standard_form(lp)
        self.max_iter = max_iter

    def solve(self, c=None, sense: str = "min") -> LPResult:
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        c_orig = self.lp.c if c is None else np.asarray(c, dtype=float).ravel()
        A, b, upper, T, offset = self.A, self.b, self.upper, self.T, self.offset
        m, n = A.shape
        n_struct = T.shape[1]
        c = np.concatenate([c_orig @ T, np.zeros(n - n_struct)])
        if sense == "max":
            c = -c

        def finish(x, iters):
            xo = offset + T @ x[:n_struct]
            return LPResult("optimal", float(c_orig @ xo), xo, iters)

        if m == 0:
            # only bounds: each variable sits at whichever bound its cost prefers
            x = np.where(c < 0, upper, 0.0)
            if np.any(np.isinf(x)):
                return LPResult("unbounded")
            return finish(x, 0)

        tab = np.hstack([A, np.eye(m)])
        up = np.concatenate([upper, np.full(m, np.inf)])
        basis = np.arange(n, n + m)
        is_basic = np.zeros(n + m, dtype=bool)
        is_basic[basis] = True
        tb = _Tableau(tab, b.copy(), basis, up, np.zeros(n + m, dtype=bool), is_basic, 0, self.max_iter,
                      np.ones(n + m, dtype=bool))

        phase1 = np.concatenate([np.zeros(n), np.ones(m)])
        tb.run(phase1)
        infeas = float(phase1 @ tb.values())
        if infeas > FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LPResult("infeasible", iterations=tb.iterations)

        # drive remaining artificials out of the basis, dropping redundant rows
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if tb.basis[r] < n:
                continue
            row = np.abs(tb.tab[r, :n]) * ~tb.is_basic[:n]
            j = int(np.argmax(row))
            if row[j] > 1e-9:
                value_j = tb.upper[j] if tb.at_upper[j] else 0.0
                tb.is_basic[tb.basis[r]] = False
                tb.pivot(r, j)
                tb.basis[r] = j
                tb.is_basic[j] = True
                tb.at_upper[j] = False
                tb.xB[r] = value_j
            else:
                keep[r] = False
        tb.tab = tb.tab[keep][:, :n]
        tb.xB = tb.xB[keep]
        tb.basis = tb.basis[keep]
        tb.upper = tb.upper[:n]
        tb.at_upper = tb.at_upper[:n]
        tb.is_basic = tb.is_basic[:n]
        tb.allowed = np.ones(n, dtype=bool)
        if tb.basis.size == 0:
            x = np.where(c < 0, tb.upper, 0.0)
            if np.any(np.isinf(x)):
                return LPResult("unbounded", iterations=tb.iterations)
            return finish(x, tb.iterations)

        if tb.run(c) == "unbounded":
            return LPResult("unbounded", iterations=tb.iterations)
        return finish(tb.values(), tb.iterations)


def solve(lp: LinearProgram, sense: str = "min", max_iter: int = 10_000) -> LPResult:
    """Solve ``lp``; returns status ``optimal``, ``infeasible`` or ``unbounded``."""
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    return StandardForm(lp, max_iter).solve(None, sense)


def is_feasible(lp: LinearProgram) -> bool:
    zero = LinearProgram(np.zeros(lp.n_vars), lp.A, lp.senses, lp.b, lp.lb, lp.ub)
    return solve(zero).status == "optimal"
