"""Finite abstractions of a stochastic system over a state partition.

Every class starts from the same footprints: for each safe state ``s``, action
``a`` and noise cell ``c``, the sorted set of states whose closed region meets
the reachable box of ``s`` under ``c``.  Probability bounds for a target set
``T`` follow from the footprints and the cell masses:

    lower(T) = sum_c P(c) [footprint(s, a, c) is a subset of T]
    upper(T) = sum_c P(c) [footprint(s, a, c) meets T]

Interval classes (IMDP, TwoIMDP, MIMDP) keep singleton bounds plus a list of
cluster bounds per row.  The SMDP keeps the footprints themselves together with
the cell masses.  The avoid state is absorbing under every action.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import StatePartition
from .lp import LinearProgram, solve
from .noise import NoisePartition
from .systems import Action, reach

KINDS = ("IMDP", "TwoIMDP", "MIMDP", "SMDP")
MEMBERSHIP_TOL = 1e-9
FORMAT_VERSION = 1


class CoverError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper <= 1.0):
            raise ValueError(f"invalid bounds ({self.lower}, {self.upper})")


@dataclass
class Footprints:
    """CSR layout: entry ``(row * n_cells + c)`` lists the states hit under cell ``c``.

    ``row = s * n_actions + a`` over safe states ``s``.
    """

    ptr: np.ndarray
    idx: np.ndarray
    n_actions: int
    n_cells: int

    def get(self, s, a, c) -> np.ndarray:
        k = (s * self.n_actions + a) * self.n_cells + c
        return self.idx[self.ptr[k]:self.ptr[k + 1]]

    def row(self, s, a) -> list:
        return [self.get(s, a, c) for c in range(self.n_cells)]


def compute_footprints(system, partition: StatePartition, noise: NoisePartition, states=None) -> Footprints:
    if system.dim != partition.dim:
        raise ValueError(f"system dimension {system.dim} does not match partition dimension {partition.dim}")
    states = range(partition.n_safe) if states is None else states
    n_a, n_c = len(system.actions), len(noise)
    ptr, chunks, total = [0], [], 0
    for s in states:
        region = partition.region(s)
        for a in range(n_a):
            for cell in noise.cells:
                q = partition.footprint(reach(system, region, a, cell))
                chunks.append(q)
                total += q.size
                ptr.append(total)
    idx = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return Footprints(np.asarray(ptr, dtype=np.int64), idx.astype(np.int64), n_a, n_c)


def _cluster_bounds(qs, masses, members) -> tuple:
    mask_size = max(int(max((q.max() for q in qs), default=0)), int(np.max(members))) + 1
    mask = np.zeros(mask_size, dtype=bool)
    mask[members] = True
    lo = sum(m for q, m in zip(qs, masses) if mask[q].all())
    up = sum(m for q, m in zip(qs, masses) if mask[q].any())
    return min(float(lo), 1.0), min(float(up), 1.0)


def _singleton_bounds(qs, masses, n_states) -> tuple:
    lo, up = np.zeros(n_states), np.zeros(n_states)
    for q, m in zip(qs, masses):
        up[q] += m
        if q.size == 1:
            lo[q[0]] += m
    return np.minimum(lo, 1.0), np.minimum(up, 1.0)


def transition_bounds(system, partition: StatePartition, noise: NoisePartition, s: int, a: int, target) -> TransitionBounds:
    """Bounds on the probability of moving from region ``s`` into the union ``target``."""
    fp = compute_footprints(system, partition, noise, states=[s])
    members = np.unique(np.asarray(list(target), dtype=np.int64))
    lo, up = _cluster_bounds(fp.row(0, a), noise.masses, members)
    return TransitionBounds(lo, up)


def validate_cover(partition: StatePartition, cover) -> list:
    if cover is None:
        raise CoverError("TwoIMDP needs a coarse cover")
    blocks = [np.unique(np.asarray(list(b), dtype=np.int64)) for b in cover]
    seen = np.zeros(partition.n_safe, dtype=int)
    for b in blocks:
        if b.size == 0:
            raise CoverError("empty cluster in coarse cover")
        if b.min() < 0 or b.max() >= partition.n_safe:
            raise CoverError(f"cover cluster {b.tolist()} references a non-safe state")
        seen[b] += 1
    if np.any(seen > 1):
        raise CoverError(f"cover clusters overlap at states {np.flatnonzero(seen > 1).tolist()}")
    if np.any(seen == 0):
        raise CoverError(f"cover misses states {np.flatnonzero(seen == 0).tolist()}")
    return blocks


@dataclass
class IntervalView:
    """Padded per-row arrays used by the vectorised inner solvers."""

    succ: np.ndarray       # (rows, K) state indices, padded with the avoid index
    lo: np.ndarray         # (rows, K) lower bounds, 0 on padding
    up: np.ndarray         # (rows, K) upper bounds, 0 on padding
    clus_row: np.ndarray   # row of each cluster
    clus_ptr: np.ndarray   # CSR pointers into clus_pos
    clus_pos: np.ndarray   # flat positions ``row * K + slot`` of cluster members
    clus_lo: np.ndarray
    clus_up: np.ndarray


@dataclass
class SetView:
    q_ptr: np.ndarray
    q_idx: np.ndarray
    masses: np.ndarray     # (n_cells,)


@dataclass(eq=False)
class Abstraction:
    """Uncertain MDP over ``partition``; row ``r = s * n_actions + a`` for safe ``s``.

    Interval classes fill ``succ_*`` (singleton bounds, CSR over rows) and
    ``clus_*`` (extra clusters, CSR over rows, members CSR over clusters).
    The SMDP fills ``q_ptr``/``q_idx`` with one footprint per (row, cell).
    """

    kind: str
    partition: StatePartition
    actions: tuple
    noise: NoisePartition
    succ_ptr: np.ndarray | None = None
    succ_idx: np.ndarray | None = None
    succ_lo: np.ndarray | None = None
    succ_up: np.ndarray | None = None
    clus_ptr: np.ndarray | None = None
    clus_mem_ptr: np.ndarray | None = None
    clus_mem: np.ndarray | None = None
    clus_lo: np.ndarray | None = None
    clus_up: np.ndarray | None = None
    q_ptr: np.ndarray | None = None
    q_idx: np.ndarray | None = None
    build_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown abstraction class {self.kind!r}; expected one of {KINDS}")

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_rows(self) -> int:
        return self.partition.n_safe * self.n_actions

    @property
    def is_set_valued(self) -> bool:
        return self.kind == "SMDP"

    def row_index(self, s, a) -> int:
        if not 0 <= s < self.partition.n_safe:
            raise IndexError(f"state {s} has no stored row (avoid or out of range)")
        return s * self.n_actions + a

    # row accessors
    def singletons(self, s, a):
        r = self.row_index(s, a)
        sl = slice(self.succ_ptr[r], self.succ_ptr[r + 1])
        return self.succ_idx[sl], self.succ_lo[sl], self.succ_up[sl]

    def clusters(self, s, a) -> list:
        r = self.row_index(s, a)
        out = []
        for k in range(self.clus_ptr[r], self.clus_ptr[r + 1]):
            mem = self.clus_mem[self.clus_mem_ptr[k]:self.clus_mem_ptr[k + 1]]
            out.append((mem, TransitionBounds(float(self.clus_lo[k]), float(self.clus_up[k]))))
        return out

    def set_row(self, s, a) -> list:
        r = self.row_index(s, a)
        n_c = len(self.noise)
        out = []
        for c in range(n_c):
            k = r * n_c + c
            out.append((self.q_idx[self.q_ptr[k]:self.q_ptr[k + 1]], float(self.noise.masses[c])))
        return out

    @cached_property
    def interval_view(self) -> IntervalView:
        if self.is_set_valued:
            raise TypeError("SMDP has no interval rows")
        counts = np.diff(self.succ_ptr)
        K = max(int(counts.max(initial=1)), 1)
        R = self.n_rows
        succ = np.full((R, K), self.partition.avoid_index, dtype=np.int64)
        lo, up = np.zeros((R, K)), np.zeros((R, K))
        row_of = np.repeat(np.arange(R), counts)
        slot = np.arange(self.succ_idx.size) - np.repeat(self.succ_ptr[:-1], counts)
        succ[row_of, slot] = self.succ_idx
        lo[row_of, slot] = self.succ_lo
        up[row_of, slot] = self.succ_up

        clus_row, ptr, pos, c_lo, c_up = [], [0], [], [], []
        for r in range(R):
            lookup = {int(t): j for j, t in enumerate(self.succ_idx[self.succ_ptr[r]:self.succ_ptr[r + 1]])}
            for k in range(self.clus_ptr[r], self.clus_ptr[r + 1]):
                mem = self.clus_mem[self.clus_mem_ptr[k]:self.clus_mem_ptr[k + 1]]
                # members with zero upper bound carry no mass and are skipped
                slots = [r * K + lookup[int(t)] for t in mem if int(t) in lookup]
                if not slots:
                    continue
                clus_row.append(r)
                pos.extend(slots)
                ptr.append(len(pos))
                c_lo.append(self.clus_lo[k])
                c_up.append(self.clus_up[k])
        return IntervalView(succ, lo, up, np.asarray(clus_row, dtype=np.int64), np.asarray(ptr, dtype=np.int64),
                            np.asarray(pos, dtype=np.int64), np.asarray(c_lo, dtype=float), np.asarray(c_up, dtype=float))

    @cached_property
    def set_view(self) -> SetView:
        if not self.is_set_valued:
            raise TypeError("only SMDP rows are set-valued")
        return SetView(self.q_ptr, self.q_idx, np.asarray(self.noise.masses, dtype=float))

    # serialisation
    def to_dict(self) -> dict:
        arrays = {}
        for name in ("succ_ptr", "succ_idx", "succ_lo", "succ_up", "clus_ptr", "clus_mem_ptr", "clus_mem",
                     "clus_lo", "clus_up", "q_ptr", "q_idx"):
            v = getattr(self, name)
            arrays[name] = None if v is None else v.tolist()
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "partition": self.partition.to_dict(),
            "actions": [a.to_dict() for a in self.actions],
            "noise": self.noise.to_dict(),
            "rows": arrays,
            "build_seconds": self.build_seconds,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Abstraction":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported abstraction format {d.get('format_version')!r}")
        ints = {"succ_ptr", "succ_idx", "clus_ptr", "clus_mem_ptr", "clus_mem", "q_ptr", "q_idx"}
        rows = {k: None if v is None else np.asarray(v, dtype=np.int64 if k in ints else float)
                for k, v in d["rows"].items()}
        return cls(d["kind"], StatePartition.from_dict(d["partition"]), tuple(Action.from_dict(a) for a in d["actions"]),
                   NoisePartition.from_dict(d["noise"]), build_seconds=float(d.get("build_seconds", 0.0)),
                   meta=dict(d.get("meta", {})), **rows)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Abstraction":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_abstraction(system, partition: StatePartition, noise: NoisePartition, kind: str,
                      coarse_cover=None, footprints: Footprints | None = None) -> Abstraction:
    """Construct one abstraction class from the footprints of every (state, action, cell)."""
    if kind not in KINDS:
        raise ValueError(f"unknown abstraction class {kind!r}; expected one of {KINDS}")
    if kind == "TwoIMDP":
        blocks = validate_cover(partition, coarse_cover)
    elif coarse_cover is not None:
        raise CoverError("a coarse cover is only meaningful for TwoIMDP")
    t0 = time.perf_counter()
    fp = footprints if footprints is not None else compute_footprints(system, partition, noise)
    n_a, n_c = len(system.actions), len(noise)
    n_states = partition.n_states
    masses = np.asarray(noise.masses, dtype=float)
    common = dict(kind=kind, partition=partition, actions=tuple(system.actions), noise=noise)

    if kind == "SMDP":
        abs_ = Abstraction(**common, q_ptr=fp.ptr.copy(), q_idx=fp.idx.copy())
        abs_.build_seconds = time.perf_counter() - t0
        return abs_

    succ_ptr, succ_idx, succ_lo, succ_up = [0], [], [], []
    clus_ptr, mem_ptr, mem, c_lo, c_up = [0], [0], [], [], []
    for s in range(partition.n_safe):
        for a in range(n_a):
            qs = fp.row(s, a)
            lo, up = _singleton_bounds(qs, masses, n_states)
            keep = np.flatnonzero(up > 0)
            succ_idx.extend(keep.tolist())
            succ_lo.extend(lo[keep].tolist())
            succ_up.extend(up[keep].tolist())
            succ_ptr.append(len(succ_idx))

            if kind == "TwoIMDP":
                candidates = blocks
            elif kind == "MIMDP":
                uniq = {tuple(q.tolist()) for q in qs}
                candidates = [np.asarray(t, dtype=np.int64) for t in sorted(uniq, key=lambda t: (len(t), t))]
            else:
                candidates = []
            for members in candidates:
                # singletons duplicate the singleton bounds, the full set is always (1, 1)
                if members.size <= 1 or members.size == n_states:
                    continue
                cl, cu = _cluster_bounds(qs, masses, members)
                if cu <= 0:
                    continue
                mem.extend(members.tolist())
                mem_ptr.append(len(mem))
                c_lo.append(cl)
                c_up.append(cu)
            clus_ptr.append(len(c_lo))

    i64 = lambda v: np.asarray(v, dtype=np.int64)
    f64 = lambda v: np.asarray(v, dtype=float)
    abs_ = Abstraction(**common, succ_ptr=i64(succ_ptr), succ_idx=i64(succ_idx), succ_lo=f64(succ_lo),
                       succ_up=f64(succ_up), clus_ptr=i64(clus_ptr), clus_mem_ptr=i64(mem_ptr), clus_mem=i64(mem),
                       clus_lo=f64(c_lo), clus_up=f64(c_up))
    _check_interval_rows(abs_)
    abs_.build_seconds = time.perf_counter() - t0
    return abs_


def _check_interval_rows(abs_: Abstraction):
    counts = np.diff(abs_.succ_ptr)
    row_of = np.repeat(np.arange(abs_.n_rows), counts)
    lo_sum = np.bincount(row_of, weights=abs_.succ_lo, minlength=abs_.n_rows)
    up_sum = np.bincount(row_of, weights=abs_.succ_up, minlength=abs_.n_rows)
    bad = np.flatnonzero((lo_sum > 1 + 1e-9) | (up_sum < 1 - 1e-9))
    if bad.size:
        raise ValueError(f"empty ambiguity set in rows {bad[:10].tolist()}")
    if np.any(abs_.succ_lo > abs_.succ_up) or np.any(abs_.clus_lo > abs_.clus_up):
        raise ValueError("lower bound above upper bound")


def _is_avoid_dirac(abs_: Abstraction, gamma, tol) -> bool:
    target = np.zeros_like(gamma)
    target[abs_.partition.avoid_index] = 1.0
    return bool(np.max(np.abs(gamma - target)) <= tol)


def membership(abs_: Abstraction, s: int, a: int, gamma, tol: float = MEMBERSHIP_TOL) -> bool:
    """Whether distribution ``gamma`` over all states lies in the row's ambiguity set."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (abs_.partition.n_states,):
        raise ValueError(f"gamma must have length {abs_.partition.n_states}")
    if np.any(gamma < -tol) or abs(gamma.sum() - 1.0) > tol:
        return False
    if s == abs_.partition.avoid_index:
        return _is_avoid_dirac(abs_, gamma, tol)

    if not abs_.is_set_valued:
        idx, lo, up = abs_.singletons(s, a)
        rest = np.ones(gamma.size, dtype=bool)
        rest[idx] = False
        if np.any(gamma[rest] > tol):
            return False
        g = gamma[idx]
        if np.any(g < lo - tol) or np.any(g > up + tol):
            return False
        for members, b in abs_.clusters(s, a):
            tot = gamma[members].sum()
            if tot < b.lower - tol or tot > b.upper + tol:
                return False
        return True

    # SMDP: transport the cell masses onto gamma along the footprints
    row = abs_.set_row(s, a)
    support = np.unique(np.concatenate([q for q, _ in row]))
    outside = np.ones(gamma.size, dtype=bool)
    outside[support] = False
    if np.any(gamma[outside] > tol):
        return False
    var = [(c, int(t)) for c, (q, _) in enumerate(row) for t in q]
    col = {t: j for j, t in enumerate(support.tolist())}
    n_v, n_c = len(var), len(row)
    A_cell = np.zeros((n_c, n_v))
    A_state = np.zeros((support.size, n_v))
    for v, (c, t) in enumerate(var):
        A_cell[c, v] = 1.0
        A_state[col[t], v] = 1.0
    masses = np.array([m for _, m in row])
    g = gamma[support]
    A = np.vstack([A_cell, A_state, A_state])
    b = np.concatenate([masses, g + tol, g - tol])
    senses = ["="] * n_c + ["<="] * support.size + [">="] * support.size
    return solve(LinearProgram(np.zeros(n_v), A, senses, b)).optimal


def memory_report(abs_: Abstraction) -> dict:
    """Stored-entry counts and an estimated byte size.

    Singleton bounds count one bound pair each (membership implicit); extra
    clusters count one bound pair plus their member indices; the SMDP stores
    member indices plus one mass per (row, cell).  The avoid state contributes
    one Dirac entry per action.
    """
    n_a = abs_.n_actions
    rows = abs_.n_rows
    if abs_.is_set_valued:
        sizes = np.diff(abs_.q_ptr)
        membership_entries = int(sizes.sum()) + n_a
        masses = int(sizes.size) + n_a
        bound_pairs = 0
        n_q = float(sizes.mean()) if sizes.size else 0.0
        post = [np.unique(abs_.q_idx[abs_.q_ptr[r * len(abs_.noise)]:abs_.q_ptr[(r + 1) * len(abs_.noise)]]).size
                for r in range(rows)]
        n_clusters = float(len(abs_.noise))
    else:
        counts = np.diff(abs_.succ_ptr)
        n_cl = np.diff(abs_.clus_ptr)
        membership_entries = int(abs_.clus_mem.size)
        bound_pairs = int(counts.sum()) + int(n_cl.sum()) + n_a
        masses = 0
        n_q = float(np.diff(abs_.clus_mem_ptr).mean()) if abs_.clus_mem_ptr.size > 1 else 1.0
        post = counts
        n_clusters = float(n_cl.mean()) if n_cl.size else 0.0
    post = np.asarray(post, dtype=float)
    n_bytes = 8 * (membership_entries + 2 * bound_pairs + masses)
    return {
        "kind": abs_.kind,
        "rows": rows + n_a,
        "membership_entries": membership_entries,
        "bound_pairs": bound_pairs,
        "masses": masses,
        "total_entries": membership_entries + bound_pairs + masses,
        "N_q": n_q,
        "N_post_mean": float(post.mean()) if post.size else 0.0,
        "N_post_max": int(post.max()) if post.size else 0,
        "N_clusters_mean": n_clusters,
        "bytes": n_bytes,
    }


def row_memory(abs_: Abstraction, s: int, a: int) -> dict:
    """Stored-entry counts of a single row."""
    if abs_.is_set_valued:
        row = abs_.set_row(s, a)
        return {"membership_entries": sum(q.size for q, _ in row), "bound_pairs": 0, "masses": len(row)}
    idx, _, _ = abs_.singletons(s, a)
    cl = abs_.clusters(s, a)
    return {"membership_entries": sum(m.size for m, _ in cl), "bound_pairs": idx.size + len(cl), "masses": 0,
            "singleton_pairs": idx.size, "cluster_pairs": len(cl)}
