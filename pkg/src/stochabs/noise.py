"""Disturbance distributions and their partition into cells with exact masses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .geometry import UNIVERSE, Rect


class ConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class UniformBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo, hi = np.atleast_1d(self.lower).astype(float), np.atleast_1d(self.upper).astype(float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("UniformBox needs lower < upper on every axis")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, size=shape)

    def box_mass(self, lo: np.ndarray, hi: np.ndarray) -> float:
        L, U = np.asarray(self.lower), np.asarray(self.upper)
        lo, hi = np.maximum(lo, L), np.minimum(hi, U)
        if np.any(lo >= hi):
            return 0.0
        return float(np.prod((hi - lo) / (U - L)))

    def to_dict(self):
        return {"type": "uniform", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class DiagonalGaussian:
    mean: tuple
    std: tuple

    def __post_init__(self):
        mu, sd = np.atleast_1d(self.mean).astype(float), np.atleast_1d(self.std).astype(float)
        if mu.shape != sd.shape or np.any(sd <= 0):
            raise ValueError("DiagonalGaussian needs positive std matching the mean")
        object.__setattr__(self, "mean", tuple(mu.tolist()))
        object.__setattr__(self, "std", tuple(sd.tolist()))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.normal(self.mean, self.std, size=shape)

    def box_mass(self, lo: np.ndarray, hi: np.ndarray) -> float:
        mu, sd = np.asarray(self.mean), np.asarray(self.std)
        zl, zh = (np.asarray(lo) - mu) / sd, (np.asarray(hi) - mu) / sd
        # difference of upper tails is more accurate when both ends sit right of the mean
        per_axis = np.where(zl > 0, ndtr(-zl) - ndtr(-zh), ndtr(zh) - ndtr(zl))
        return float(np.prod(per_axis))

    def to_dict(self):
        return {"type": "gaussian", "mean": list(self.mean), "std": list(self.std)}


def noise_from_dict(d: dict):
    if d["type"] == "uniform":
        return UniformBox(tuple(d["lower"]), tuple(d["upper"]))
    if d["type"] == "gaussian":
        return DiagonalGaussian(tuple(d["mean"]), tuple(d["std"]))
    raise ValueError(f"unknown noise type {d['type']!r}")


def sample(model, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from the full (untruncated) disturbance distribution."""
    return model.sample(rng, size)


@dataclass(frozen=True, eq=False)
class NoisePartition:
    """Cells of the disturbance space with their probabilities.

    ``cells[tail_index]`` is ``UNIVERSE`` when an unbounded remainder cell is
    present; the remaining cells tile the central box uniformly.
    """

    cells: tuple
    masses: np.ndarray
    tail_index: int | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "cells", tuple(self.cells))
        if len(self.cells) != m.size:
            raise ValueError("one mass per cell required")
        if np.any(m < 0) or np.any(m > 1) or abs(m.sum() - 1.0) > 1e-12:
            raise ConsistencyError(f"cell masses must be probabilities summing to one (sum={m.sum()!r})")

    def __len__(self):
        return len(self.cells)

    def locate_many(self, ws) -> np.ndarray:
        """Cell index of each disturbance sample (tail for anything off the box)."""
        ws = np.atleast_2d(np.asarray(ws, dtype=float))
        out = np.full(ws.shape[0], -1 if self.tail_index is None else self.tail_index, dtype=np.int64)
        assigned = np.zeros(ws.shape[0], dtype=bool)
        for k, c in enumerate(self.cells):
            if c is UNIVERSE:
                continue
            hit = ~assigned & np.all((ws >= c.lower) & (ws <= c.upper), axis=1)
            out[hit] = k
            assigned |= hit
        return out

    def to_dict(self) -> dict:
        return {
            "cells": [None if c is UNIVERSE else [c.lower.tolist(), c.upper.tolist()] for c in self.cells],
            "masses": self.masses.tolist(),
            "tail_index": self.tail_index,
            "center": None if self.center is None else np.asarray(self.center).tolist(),
            "radius": self.radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoisePartition":
        cells = tuple(UNIVERSE if c is None else Rect(c[0], c[1]) for c in d["cells"])
        center = None if d.get("center") is None else np.asarray(d["center"], dtype=float)
        return cls(cells, np.asarray(d["masses"], dtype=float), d.get("tail_index"), center, d.get("radius"))


def _uniform_cells(lo: np.ndarray, hi: np.ndarray, cells_per_dim) -> list:
    axes = [np.linspace(a, b, n + 1) for a, b, n in zip(lo, hi, cells_per_dim)]
    cells = []
    for idx in np.ndindex(*[len(a) - 1 for a in axes]):
        cells.append(Rect([a[i] for a, i in zip(axes, idx)], [a[i + 1] for a, i in zip(axes, idx)]))
    return cells


def build_noise_partition(model, cells_per_dim, w0=None, r_W=None) -> NoisePartition:
    """Uniformly partition the central box ``{w : |w - w0|_inf <= r_W}``.

    Uniform noise must be covered exactly (``w0``/``r_W`` may be omitted), and
    gets volume-ratio masses with no tail.  Gaussian noise gets CDF-product
    masses for the interior cells and one tail cell holding the remainder.
    """
    cells_per_dim = np.broadcast_to(np.atleast_1d(np.asarray(cells_per_dim, dtype=int)), (model.dim,))
    if np.any(cells_per_dim < 1):
        raise ValueError("cells_per_dim must be positive")

    if isinstance(model, UniformBox):
        L, U = np.asarray(model.lower), np.asarray(model.upper)
        if w0 is not None or r_W is not None:
            c = np.broadcast_to(np.asarray(w0 if w0 is not None else 0.0, dtype=float), (model.dim,))
            lo, hi = c - r_W, c + r_W
            if not (np.allclose(lo, L, rtol=0, atol=1e-12) and np.allclose(hi, U, rtol=0, atol=1e-12)):
                raise ValueError("for uniform noise the central box must equal the support")
        cells = _uniform_cells(L, U, cells_per_dim)
        # equal-volume cells, so every mass is exactly 1 / (number of cells)
        masses = np.full(len(cells), 1.0 / len(cells))
        return NoisePartition(tuple(cells), masses, None, None, None)

    if isinstance(model, DiagonalGaussian):
        if r_W is None or r_W <= 0:
            raise ValueError("Gaussian noise needs a positive radius r_W")
        c = np.broadcast_to(np.asarray(w0 if w0 is not None else 0.0, dtype=float), (model.dim,)).copy()
        cells = _uniform_cells(c - r_W, c + r_W, cells_per_dim)
        masses = [model.box_mass(cell.lower, cell.upper) for cell in cells]
        tail = 1.0 - float(np.sum(masses))
        if tail < 0:
            if tail < -1e-12:
                raise ConsistencyError(f"negative tail mass {tail!r}")
            tail = 0.0
        cells.append(UNIVERSE)
        masses.append(tail)
        return NoisePartition(tuple(cells), np.array(masses), len(cells) - 1, c, float(r_W))

    raise TypeError(f"unsupported noise model {type(model).__name__}")
