"""Finite abstractions of stochastic systems with robust reach-avoid synthesis.

Typical use builds a partition and noise cells, abstracts them into one of
the classes in ``KINDS`` and runs :func:`rdp` for guaranteed bounds.
"""
from .abstraction import KINDS, Abstraction, build_abstraction, compute_footprints, membership
from .geometry import Rect, build_grid_partition, coarse_cover, partition_from_edges
from .noise import build_noise_partition
from .synthesis import Spec, SynthesisResult, rdp, refine_controller
from .systems import make_system

__version__ = "0.1.0"

__all__ = [
    "KINDS", "Abstraction", "build_abstraction", "compute_footprints", "membership", "Rect",
    "build_grid_partition", "coarse_cover", "partition_from_edges", "build_noise_partition", "Spec",
    "SynthesisResult", "rdp", "refine_controller", "make_system",
]
