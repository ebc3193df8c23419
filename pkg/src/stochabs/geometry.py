"""Axis-aligned boxes and rectilinear state-space partitions.

Regions are the cells of a rectilinear grid over the safe box.  Cells are
half-open ``[lower, upper)`` for point location, except that the upper face of
the safe box belongs to the last cell along each axis.  One synthetic state,
the avoid state, stands for everything outside the safe box plus every cell
merged into an avoid box; it has no geometry of its own.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class Relation(enum.Enum):
    DISJOINT = "disjoint"
    INTERSECTS = "intersects"
    CONTAINED_IN = "contained_in"


class _Universe:
    """All of R^n.  Used as the reachable set of the unbounded noise cell."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNIVERSE"

    def __reduce__(self):
        return (_Universe, ())


UNIVERSE = _Universe()


@dataclass(frozen=True, eq=False)
class Rect:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError(f"lower > upper in {lo} / {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains_point(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def padded(self, eps: float) -> "Rect":
        """Grow outward by ``eps * max(1, |bound|)`` per face."""
        return Rect(self.lower - eps * np.maximum(1.0, np.abs(self.lower)),
                    self.upper + eps * np.maximum(1.0, np.abs(self.upper)))

    def __eq__(self, other):
        if not isinstance(other, Rect):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        return f"Rect({self.lower.tolist()}, {self.upper.tolist()})"


def rect_relation(a, b) -> Relation:
    """Classify box ``a`` against box ``b`` using closed boxes.

    ``CONTAINED_IN`` iff a is a subset of b; ``INTERSECTS`` iff the closures
    overlap but a is not inside b; ``DISJOINT`` otherwise.  The universe is
    contained only in itself and intersects everything.
    """
    if a is UNIVERSE:
        return Relation.CONTAINED_IN if b is UNIVERSE else Relation.INTERSECTS
    if b is UNIVERSE:
        return Relation.CONTAINED_IN
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if np.all(a.lower >= b.lower) and np.all(a.upper <= b.upper):
        return Relation.CONTAINED_IN
    if np.all(a.lower <= b.upper) and np.all(a.upper >= b.lower):
        return Relation.INTERSECTS
    return Relation.DISJOINT


@dataclass(frozen=True, eq=False)
class StatePartition:
    """Rectilinear grid over ``safe_box`` plus one avoid state.

    ``edges[i]`` holds the cell boundaries along axis ``i``.  ``cell_state``
    maps each grid cell (row-major, last axis fastest) to its state index, or
    to ``-1`` when the cell was merged into the avoid state.  Safe states are
    numbered ``0..n_safe-1`` in row-major cell order; the avoid state is
    ``n_safe``.
    """

    edges: tuple
    cell_state: np.ndarray
    reach_indices: frozenset
    safe_box: Rect = field(init=False)
    state_cell: np.ndarray = field(init=False)

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        for e in edges:
            if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("edges must be strictly increasing with at least two entries")
            e.setflags(write=False)
        shape = tuple(e.size - 1 for e in edges)
        cell_state = np.asarray(self.cell_state, dtype=np.int64).reshape(-1)
        if cell_state.size != int(np.prod(shape)):
            raise ValueError("cell_state size does not match the grid shape")
        safe_cells = np.flatnonzero(cell_state >= 0)
        if not np.array_equal(cell_state[safe_cells], np.arange(safe_cells.size)):
            raise ValueError("safe states must be numbered 0..n_safe-1 in cell order")
        cell_state.setflags(write=False)
        safe_cells.setflags(write=False)
        reach = frozenset(int(i) for i in self.reach_indices)
        if any(i < 0 or i >= safe_cells.size for i in reach):
            raise ValueError("reach indices must be safe states")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "cell_state", cell_state)
        object.__setattr__(self, "reach_indices", reach)
        object.__setattr__(self, "safe_box", Rect([e[0] for e in edges], [e[-1] for e in edges]))
        object.__setattr__(self, "state_cell", safe_cells)

    @property
    def dim(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple:
        return tuple(e.size - 1 for e in self.edges)

    @property
    def n_safe(self) -> int:
        return int(self.state_cell.size)

    @property
    def avoid_index(self) -> int:
        return self.n_safe

    @property
    def n_states(self) -> int:
        return self.n_safe + 1

    @property
    def non_terminal(self) -> np.ndarray:
        return np.array([i for i in range(self.n_safe) if i not in self.reach_indices], dtype=np.int64)

    def region(self, index: int) -> Rect:
        if not 0 <= index < self.n_safe:
            raise IndexError(f"{index} is not a safe region")
        multi = np.unravel_index(self.state_cell[index], self.shape)
        lo = [e[k] for e, k in zip(self.edges, multi)]
        hi = [e[k + 1] for e, k in zip(self.edges, multi)]
        return Rect(lo, hi)

    @property
    def regions(self) -> list:
        return [self.region(i) for i in range(self.n_safe)]

    def region_bounds(self) -> tuple:
        """Arrays ``(lower, upper)`` of shape ``(n_safe, dim)``."""
        multi = np.unravel_index(self.state_cell, self.shape)
        lo = np.stack([e[k] for e, k in zip(self.edges, multi)], axis=1)
        hi = np.stack([e[k + 1] for e, k in zip(self.edges, multi)], axis=1)
        return lo, hi

    def locate(self, x) -> int:
        return int(self.locate_many(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def locate_many(self, xs) -> np.ndarray:
        """State index for each row of ``xs``. Points off the safe box go to avoid."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None] if self.dim == 1 else xs[None, :]
        out = np.full(xs.shape[0], self.avoid_index, dtype=np.int64)
        inside = np.all((xs >= self.safe_box.lower) & (xs <= self.safe_box.upper), axis=1)
        if not inside.any():
            return out
        idx = [np.searchsorted(e[1:-1], xs[inside, i], side="right") for i, e in enumerate(self.edges)]
        cells = np.ravel_multi_index(idx, self.shape)
        states = self.cell_state[cells]
        out[inside] = np.where(states >= 0, states, self.avoid_index)
        return out

    def footprint(self, box) -> np.ndarray:
        """Sorted state indices whose closed region meets ``box``.

        The avoid state is included when the box leaves the safe box or touches
        a merged avoid cell.  The universe meets every state.
        """
        if box is UNIVERSE:
            return np.arange(self.n_states, dtype=np.int64)
        if box.dim != self.dim:
            raise DimensionError(f"dimension mismatch: {box.dim} vs {self.dim}")
        outside = bool(np.any(box.lower < self.safe_box.lower) or np.any(box.upper > self.safe_box.upper))
        ranges = []
        for e, lo, hi in zip(self.edges, box.lower, box.upper):
            j_lo = int(np.searchsorted(e[1:], lo, side="left"))
            j_hi = int(np.searchsorted(e[:-1], hi, side="right")) - 1
            j_lo, j_hi = max(j_lo, 0), min(j_hi, e.size - 2)
            if j_lo > j_hi:
                return np.array([self.avoid_index], dtype=np.int64)
            ranges.append(np.arange(j_lo, j_hi + 1))
        grids = np.meshgrid(*ranges, indexing="ij")
        cells = np.ravel_multi_index([g.ravel() for g in grids], self.shape)
        states = self.cell_state[cells]
        hit = states[states >= 0]
        if outside or hit.size < states.size:
            hit = np.append(hit, self.avoid_index)
        return np.unique(hit)

    def to_dict(self) -> dict:
        return {
            "edges": [e.tolist() for e in self.edges],
            "cell_state": self.cell_state.tolist(),
            "reach_indices": sorted(self.reach_indices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StatePartition":
        return cls(tuple(np.asarray(e) for e in d["edges"]), np.asarray(d["cell_state"]), frozenset(d["reach_indices"]))


def _aligned_index(edges: np.ndarray, value: float, tol: float = 1e-9) -> int:
    k = int(np.argmin(np.abs(edges - value)))
    scale = float(np.min(np.diff(edges)))
    if abs(edges[k] - value) > tol * scale:
        raise AlignmentError(f"face {value} does not lie on a grid line")
    return k


def _cells_inside(edges: tuple, box: Rect) -> np.ndarray:
    """Mask over grid cells (row-major) that lie inside an aligned ``box``."""
    if box.dim != len(edges):
        raise DimensionError(f"dimension mismatch: {box.dim} vs {len(edges)}")
    shape = tuple(e.size - 1 for e in edges)
    slices = []
    for e, lo, hi in zip(edges, box.lower, box.upper):
        # clip to the safe box first so boxes poking outside are still usable
        lo_c, hi_c = max(lo, e[0]), min(hi, e[-1])
        if lo_c >= hi_c:
            return np.zeros(int(np.prod(shape)), dtype=bool)
        slices.append(slice(_aligned_index(e, lo_c), _aligned_index(e, hi_c)))
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slices)] = True
    return mask.ravel()


def partition_from_edges(edges, reach_box: Rect | None = None, avoid_boxes=(), reach_indices=None) -> StatePartition:
    """Partition from explicit per-axis edges; boxes must sit on grid lines."""
    edges = tuple(np.asarray(e, dtype=float) for e in edges)
    n_cells = int(np.prod([e.size - 1 for e in edges]))
    avoid = np.zeros(n_cells, dtype=bool)
    for box in avoid_boxes:
        avoid |= _cells_inside(edges, box)
    cell_state = np.full(n_cells, -1, dtype=np.int64)
    cell_state[~avoid] = np.arange(int((~avoid).sum()))
    if reach_indices is None:
        reach_indices = ()
        if reach_box is not None:
            reach_cells = np.flatnonzero(_cells_inside(edges, reach_box) & ~avoid)
            reach_indices = cell_state[reach_cells]
    return StatePartition(edges, cell_state, frozenset(int(i) for i in reach_indices))


def build_grid_partition(safe_box: Rect, cells_per_dim, reach_box: Rect | None = None, avoid_boxes=()) -> StatePartition:
    """Uniform grid over ``safe_box``; cells inside avoid boxes join the avoid state."""
    cells_per_dim = np.atleast_1d(np.asarray(cells_per_dim, dtype=int))
    if cells_per_dim.size != safe_box.dim:
        raise DimensionError("cells_per_dim must match the safe box dimension")
    if np.any(cells_per_dim < 1):
        raise ValueError("cells_per_dim must be positive")
    edges = [np.linspace(lo, hi, n + 1) for lo, hi, n in zip(safe_box.lower, safe_box.upper, cells_per_dim)]
    return partition_from_edges(edges, reach_box, avoid_boxes)


def coarse_cover(partition: StatePartition, k) -> list:
    """Non-overlapping k x ... x k super-blocks of safe states."""
    k = np.broadcast_to(np.atleast_1d(np.asarray(k, dtype=int)), (partition.dim,))
    block_shape = [int(np.ceil(n / kk)) for n, kk in zip(partition.shape, k)]
    blocks = {}
    for state, cell in enumerate(partition.state_cell):
        multi = np.unravel_index(cell, partition.shape)
        key = tuple(int(m) // int(kk) for m, kk in zip(multi, k))
        blocks.setdefault(key, []).append(state)
    keys = sorted(blocks, key=lambda t: np.ravel_multi_index(t, block_shape))
    return [tuple(blocks[key]) for key in keys]


def grid_corners(rect: Rect) -> np.ndarray:
    return np.array(list(itertools.product(*zip(rect.lower, rect.upper))), dtype=float)
