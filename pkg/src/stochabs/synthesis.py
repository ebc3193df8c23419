"""Robust dynamic programming for reach-avoid objectives on uncertain MDPs.

The pessimistic recursion maximises over actions the worst case over each
ambiguity set; the optimistic pass replays the resulting strategy against the
best case.  Inner problems per class:

* interval rows without clusters: ordered assignment over successors sorted by value;
* interval rows with clusters: the ordered-assignment answer when it already
  satisfies every cluster bound, otherwise a linear program;
* set-valued rows: each cell's mass goes to the extreme value inside its footprint.
"""
from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .abstraction import Abstraction
from .geometry import StatePartition
from .lp import LinearProgram, StandardForm

# slack for float noise in the monotonicity / sandwich assertions
INVARIANT_TOL = 1e-9
# a new action replaces the current one only if it is better by more than this
SWITCH_TOL = 1e-12
CLUSTER_TOL = 1e-12
# successors whose combined upper bound is below this may share one LP column
FOLD_MASS = 1e-9


class AbstractionInconsistent(RuntimeError):
    pass


class InvariantViolation(AssertionError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Spec:
    """Reach-avoid objective; ``horizon=None`` means unbounded."""

    reach_indices: frozenset
    avoid_index: int
    horizon: int | None = None
    epsilon: float = 1e-6
    max_iter: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "reach_indices", frozenset(int(i) for i in self.reach_indices))
        if self.avoid_index in self.reach_indices:
            raise ValueError("the avoid state cannot be a reach state")
        if self.horizon is None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError("horizon must be non-negative")

    @classmethod
    def for_partition(cls, partition: StatePartition, **kw) -> "Spec":
        return cls(partition.reach_indices, partition.avoid_index, **kw)

    def to_dict(self):
        return {"reach_indices": sorted(self.reach_indices), "avoid_index": self.avoid_index,
                "horizon": self.horizon, "epsilon": self.epsilon, "max_iter": self.max_iter}


@dataclass
class SynthesisResult:
    kind: str
    p_lower: np.ndarray
    p_upper: np.ndarray
    strategy: np.ndarray
    iterations: int
    residual: float
    converged: bool
    upper_iterations: int = 0
    upper_residual: float = 0.0
    seconds: float = 0.0
    # finite horizon: schedule[k] is the action table with k+1 steps to go
    schedule: np.ndarray | None = None
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p_lower": self.p_lower.tolist(),
            "p_upper": self.p_upper.tolist(),
            "strategy": self.strategy.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "upper_iterations": self.upper_iterations,
            "upper_residual": self.upper_residual,
            "seconds": self.seconds,
            "schedule": None if self.schedule is None else self.schedule.tolist(),
            "spec": self.spec,
        }

    @classmethod
    def from_dict(cls, d) -> "SynthesisResult":
        return cls(d["kind"], np.asarray(d["p_lower"], dtype=float), np.asarray(d["p_upper"], dtype=float),
                   np.asarray(d["strategy"], dtype=np.int64), int(d["iterations"]), float(d["residual"]),
                   bool(d["converged"]), int(d.get("upper_iterations", 0)), float(d.get("upper_residual", 0.0)),
                   float(d.get("seconds", 0.0)),
                   None if d.get("schedule") is None else np.asarray(d["schedule"], dtype=np.int64),
                   dict(d.get("spec", {})))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "SynthesisResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def ordered_assignment(lo, up, values, sense="min"):
    """Vectorised O-maximisation over rows of padded interval arrays.

    Returns ``(value, gamma)`` with gamma aligned to the input columns.
    """
    lo, up, values = np.atleast_2d(lo), np.atleast_2d(up), np.atleast_2d(values)
    key = values if sense == "min" else -values
    order = np.argsort(key, axis=1, kind="stable")
    lo_s = np.take_along_axis(lo, order, axis=1)
    cap = np.take_along_axis(up, order, axis=1) - lo_s
    remaining = 1.0 - lo_s.sum(axis=1, keepdims=True)
    before = np.cumsum(cap, axis=1) - cap
    g_sorted = lo_s + np.clip(remaining - before, 0.0, cap)
    gamma = np.empty_like(g_sorted)
    np.put_along_axis(gamma, order, g_sorted, axis=1)
    return (gamma * values).sum(axis=1), gamma


class RowSolver:
    """Inner optimisation over every stored row of one abstraction."""

    def __init__(self, abs_: Abstraction, threads: int = 1, fold_mass: float = 0.0):
        self.abs = abs_
        self.threads = max(1, int(threads))
        self.fold_mass = float(fold_mass)
        self.lp_solves = 0
        self._lp_cache = {}
        self._last = {}
        if abs_.is_set_valued:
            v = abs_.set_view
            self._starts = v.q_ptr[:-1]
            self._n_cells = v.masses.size
        else:
            v = abs_.interval_view
            self._K = v.succ.shape[1]
            self._has_clusters = np.zeros(abs_.n_rows, dtype=bool)
            self._has_clusters[v.clus_row] = True
        self.view = v

    def values(self, p, sense="min", rows=None):
        rows = np.arange(self.abs.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            return np.zeros(0)
        if self.abs.is_set_valued:
            return self._set_values(p, sense, rows)
        return self._interval_values(p, sense, rows)

    def _set_values(self, p, sense, rows):
        v = self.view
        vals = p[v.q_idx]
        red = np.minimum if sense == "min" else np.maximum
        ext = red.reduceat(vals, self._starts).reshape(-1, self._n_cells)
        return ext[rows] @ v.masses

    def _interval_values(self, p, sense, rows):
        v = self.view
        succ = v.succ[rows]
        value, gamma = ordered_assignment(v.lo[rows], v.up[rows], p[succ], sense)
        if v.clus_row.size == 0:
            return value
        todo = rows[self._has_clusters[rows]]
        if todo.size == 0:
            return value
        # cluster sums of the ordered-assignment answer; rows that break a bound go to the LP
        full = np.zeros((self.abs.n_rows, self._K))
        full[rows] = gamma
        sums = np.add.reduceat(full.ravel()[v.clus_pos], v.clus_ptr[:-1])
        broken = (sums < v.clus_lo - CLUSTER_TOL) | (sums > v.clus_up + CLUSTER_TOL)
        in_rows = np.zeros(self.abs.n_rows, dtype=bool)
        in_rows[rows] = True
        bad_rows = np.unique(v.clus_row[broken & in_rows[v.clus_row]])
        if bad_rows.size:
            pos = np.searchsorted(rows, bad_rows) if np.all(np.diff(rows) > 0) else \
                np.array([int(np.flatnonzero(rows == r)[0]) for r in bad_rows])
            if self.threads > 1:
                with ThreadPoolExecutor(self.threads) as ex:
                    res = list(ex.map(lambda r: self.lp_row(int(r), p, sense)[0], bad_rows))
            else:
                res = [self.lp_row(int(r), p, sense)[0] for r in bad_rows]
            value[pos] = res
        return value

    def _row_lp(self, r):
        if r in self._lp_cache:
            return self._lp_cache[r]
        a = self.abs
        sl = slice(a.succ_ptr[r], a.succ_ptr[r + 1])
        succ, lo, up = a.succ_idx[sl], a.succ_lo[sl], a.succ_up[sl]
        col = {int(t): j for j, t in enumerate(succ)}
        n = succ.size
        lo_sum, up_sum = lo.sum(), up.sum()
        members, c_lo, c_up = [], [], []
        for k in range(a.clus_ptr[r], a.clus_ptr[r + 1]):
            mem = [col[int(t)] for t in a.clus_mem[a.clus_mem_ptr[k]:a.clus_mem_ptr[k + 1]] if int(t) in col]
            if not mem:
                continue
            in_lo, in_up = lo[mem].sum(), up[mem].sum()
            # drop cluster bounds already implied by the singleton bounds
            implied_lo = a.clus_lo[k] <= max(in_lo, 1.0 - (up_sum - in_up)) + CLUSTER_TOL
            implied_up = a.clus_up[k] >= min(in_up, 1.0 - (lo_sum - in_lo)) - CLUSTER_TOL
            if implied_lo and implied_up:
                continue
            members.append(mem)
            c_lo.append(a.clus_lo[k])
            c_up.append(a.clus_up[k])

        groups = [[j] for j in range(n)]
        if self.fold_mass > 0:
            groups = _fold_groups(lo, up, members, self.fold_mass)
        g = len(groups)
        m = len(members)
        where = np.empty(n, dtype=np.int64)
        for gi, grp in enumerate(groups):
            where[grp] = gi
        # cluster totals become bounded auxiliary variables: sum_T gamma - t_T = 0
        A = np.zeros((m + 1, g + m))
        for k, mem in enumerate(members):
            A[k, np.unique(where[mem])] = 1.0
            A[k, g + k] = -1.0
        A[m, :g] = 1.0
        b = np.zeros(m + 1)
        b[m] = 1.0
        g_lo = np.array([lo[grp].sum() for grp in groups])
        g_up = np.array([up[grp].sum() for grp in groups])
        lb = np.concatenate([g_lo, c_lo])
        ub = np.concatenate([g_up, c_up])
        form = StandardForm(LinearProgram(np.zeros(A.shape[1]), A, ["="] * b.size, b, lb, ub))
        entry = (succ, [np.asarray(grp) for grp in groups], form)
        self._lp_cache[r] = entry
        return entry

    def lp_row(self, r, p, sense="min"):
        """LP inner value of row ``r``; returns ``(value, successors, gamma over successors)``."""
        succ, groups, form = self._row_lp(r)
        local = p[succ]
        memo = self._last.get((r, sense))
        if memo is not None and np.array_equal(memo[0], local):
            return memo[1], succ, memo[2]
        x = np.zeros(succ.size)
        if local.min() == local.max():
            # constant values: every feasible distribution gives the same answer
            arg = np.argmin if sense == "min" else np.argmax
            x[int(arg(local))] = 1.0
            return float(local[0]), succ, x
        pick = np.min if sense == "min" else np.max
        cost = np.array([pick(local[grp]) for grp in groups])
        c = np.concatenate([cost, np.zeros(form.lp.n_vars - cost.size)])
        res = form.solve(c, sense)
        self.lp_solves += 1
        if not res.optimal:
            s, a = divmod(r, self.abs.n_actions)
            raise AbstractionInconsistent(f"inner LP for state {s}, action {a} is {res.status}")
        arg = np.argmin if sense == "min" else np.argmax
        for gi, grp in enumerate(groups):
            x[grp[arg(local[grp])]] += res.x[gi]
        self._last[(r, sense)] = (local.copy(), res.value, x)
        return res.value, succ, x


def _fold_groups(lo, up, members, fold_mass):
    """Group successors that can be merged into one LP column.

    Successors with zero lower bound and the same cluster memberships are
    merged while their summed upper bound stays within ``fold_mass``.  A merged
    column may put all of its mass on its cheapest (or dearest) member, which
    enlarges the ambiguity set, so the LP value moves by at most ``fold_mass``
    in the conservative direction.
    """
    n = lo.size
    sig = [[] for _ in range(n)]
    for k, mem in enumerate(members):
        for j in mem:
            sig[j].append(k)
    buckets, groups = {}, []
    for j in range(n):
        if lo[j] == 0.0 and up[j] <= fold_mass:
            buckets.setdefault(tuple(sig[j]), []).append(j)
        else:
            groups.append([j])
    for key in sorted(buckets):
        cur, mass = [], 0.0
        for j in buckets[key]:
            if cur and mass + up[j] > fold_mass:
                groups.append(cur)
                cur, mass = [], 0.0
            cur.append(j)
            mass += up[j]
        groups.append(cur)
    return groups


def _row_of(abs_: Abstraction, s, a):
    if s == abs_.partition.avoid_index:
        raise ValueError("the avoid state has a fixed Dirac row")
    return abs_.row_index(s, a)


def _inner(abs_: Abstraction, s, a, p, sense):
    p = np.asarray(p, dtype=float)
    n_states = abs_.partition.n_states
    if p.shape != (n_states,):
        raise ValueError(f"value vector must have length {n_states}")
    if s == abs_.partition.avoid_index:
        g = np.zeros(n_states)
        g[s] = 1.0
        return float(p[s]), g
    r = _row_of(abs_, s, a)
    gamma = np.zeros(n_states)
    if abs_.is_set_valued:
        pick = np.argmin if sense == "min" else np.argmax
        for q, m in abs_.set_row(s, a):
            gamma[q[pick(p[q])]] += m
        return float(gamma @ p), gamma
    idx, lo, up = abs_.singletons(s, a)
    value, g = ordered_assignment(lo[None], up[None], p[idx][None], sense)
    ok = all(b.lower - CLUSTER_TOL <= g[0][np.isin(idx, mem)].sum() <= b.upper + CLUSTER_TOL
             for mem, b in abs_.clusters(s, a))
    if ok:
        gamma[idx] = g[0]
        return float(value[0]), gamma
    value, succ, x = RowSolver(abs_).lp_row(r, p, sense)
    gamma[succ] = x
    return float(value), gamma


def inner_min(abs_: Abstraction, s: int, a: int, p):
    """Worst-case expected value of ``p`` over the row's ambiguity set, with a minimiser."""
    return _inner(abs_, s, a, p, "min")


def inner_max(abs_: Abstraction, s: int, a: int, p) -> float:
    return _inner(abs_, s, a, p, "max")[0]


def inner_max_witness(abs_: Abstraction, s: int, a: int, p):
    return _inner(abs_, s, a, p, "max")


def _pin(p, reach, avoid):
    p[reach] = 1.0
    p[avoid] = 0.0


def rdp(abs_: Abstraction, spec: Spec, threads: int = 1, solver: RowSolver | None = None,
        fold_mass: float = FOLD_MASS) -> SynthesisResult:
    """Pessimistic recursion with strategy extraction, then the optimistic replay."""
    t0 = time.perf_counter()
    part = abs_.partition
    if spec.avoid_index != part.avoid_index or max(spec.reach_indices, default=-1) >= part.n_safe:
        raise ValueError("spec does not match the abstraction's partition")
    solver = solver or RowSolver(abs_, threads, fold_mass=fold_mass)
    n_a, n_safe, n = abs_.n_actions, part.n_safe, part.n_states
    reach = np.array(sorted(spec.reach_indices), dtype=np.int64)
    nt = np.array([s for s in range(n_safe) if s not in spec.reach_indices], dtype=np.int64)
    rows = (nt[:, None] * n_a + np.arange(n_a)[None, :]).ravel()
    finite = spec.horizon is not None
    sweeps = spec.horizon if finite else spec.max_iter

    p = np.zeros(n)
    p[reach] = 1.0
    strategy = np.zeros(n, dtype=np.int64)
    schedule = []
    residual, k = 0.0, 0
    converged = True
    if nt.size and sweeps > 0:
        converged = finite
        for k in range(1, sweeps + 1):
            Q = solver.values(p, "min", rows).reshape(nt.size, n_a)
            if n_a == 1:
                best, arg = Q[:, 0], np.zeros(nt.size, dtype=np.int64)
            else:
                best, arg = Q.max(axis=1), Q.argmax(axis=1)
            current = Q[np.arange(nt.size), strategy[nt]]
            switch = best > current + SWITCH_TOL
            strategy[nt[switch]] = arg[switch]
            new = p.copy()
            new[nt] = best
            _pin(new, reach, part.avoid_index)
            check_monotone(p, new, k)
            residual = float(np.max(np.abs(new - p)))
            p = new
            if finite:
                schedule.append(strategy[:n_safe].copy())
            elif residual < spec.epsilon:
                converged = True
                break
        if not converged:
            warnings.warn(f"{abs_.kind}: no convergence after {k} sweeps (residual {residual:.3e})",
                          ConvergenceWarning, stacklevel=2)
    p_lower = p

    # optimistic replay with the actions frozen from the pessimistic pass
    up_iter, up_res = 0, 0.0
    if finite:
        q = np.zeros(n)
        q[reach] = 1.0
        for j, table in enumerate(schedule, start=1):
            new = q.copy()
            new[nt] = solver.values(q, "max", nt * n_a + table[nt])
            _pin(new, reach, part.avoid_index)
            up_res = float(np.max(np.abs(new - q)))
            q = new
            up_iter = j
    else:
        q = p_lower.copy()
        sel = nt * n_a + strategy[nt]
        for up_iter in range(1, spec.max_iter + 1) if nt.size else ():
            new = q.copy()
            new[nt] = solver.values(q, "max", sel)
            _pin(new, reach, part.avoid_index)
            check_monotone(q, new, up_iter)
            up_res = float(np.max(np.abs(new - q)))
            q = new
            if up_res < spec.epsilon:
                break
    p_upper = q
    check_sandwich(p_lower, p_upper)
    check_pinned(p_lower, p_upper, reach, part.avoid_index)

    return SynthesisResult(
        kind=abs_.kind, p_lower=p_lower, p_upper=p_upper, strategy=strategy, iterations=k if nt.size else 0,
        residual=residual, converged=converged, upper_iterations=up_iter, upper_residual=up_res,
        seconds=time.perf_counter() - t0,
        schedule=np.array(schedule, dtype=np.int64).reshape(len(schedule), n_safe) if finite else None,
        spec=spec.to_dict(),
    )


def check_monotone(old, new, sweep):
    drop = float(np.max(old - new, initial=0.0))
    if drop > INVARIANT_TOL:
        raise InvariantViolation(f"value decreased by {drop:.3e} in sweep {sweep}")


def check_sandwich(lower, upper):
    gap = float(np.max(lower - upper, initial=0.0))
    if gap > INVARIANT_TOL:
        raise InvariantViolation(f"lower bound exceeds upper bound by {gap:.3e}")
    if np.any(lower < -INVARIANT_TOL) or np.any(upper > 1 + INVARIANT_TOL):
        raise InvariantViolation("bounds leave [0, 1]")


def check_pinned(lower, upper, reach, avoid):
    if reach.size and not (np.all(lower[reach] == 1.0) and np.all(upper[reach] == 1.0)):
        raise InvariantViolation("reach states are not pinned to 1")
    if lower[avoid] != 0.0 or upper[avoid] != 0.0:
        raise InvariantViolation("avoid state is not pinned to 0")


@dataclass
class Controller:
    """Piecewise-constant feedback ``x -> action index`` refined from a strategy."""

    partition: StatePartition
    strategy: np.ndarray
    schedule: np.ndarray | None = None

    def states(self, x) -> np.ndarray:
        return self.partition.locate_many(x)

    def __call__(self, x, t: int | None = None):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1 and not (self.partition.dim == 1 and x.size > 1)
        s = self.partition.locate_many(np.atleast_2d(x) if single else x)
        acts = self.table(t)[s]
        return int(acts[0]) if single else acts

    def table(self, t: int | None = None) -> np.ndarray:
        """Action per state (avoid state gets action 0) at time ``t``."""
        if self.schedule is None or t is None:
            base = self.strategy[: self.partition.n_safe]
        else:
            T = self.schedule.shape[0]
            base = self.schedule[max(T - 1 - t, 0)]
        return np.append(base, 0)


def refine_controller(result: SynthesisResult, partition: StatePartition) -> Controller:
    if result.strategy is None:
        raise ValueError("result carries no strategy")
    return Controller(partition, np.asarray(result.strategy, dtype=np.int64), result.schedule)
