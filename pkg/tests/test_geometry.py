import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochabs.geometry import (UNIVERSE, AlignmentError, DimensionError, Rect, Relation, StatePartition,
                               build_grid_partition, coarse_cover, grid_corners, rect_relation)

unit = Rect([0, 0], [1, 1])


def overlap_1d(alo, ahi, blo, bhi):
    return alo <= bhi and blo <= ahi


def test_grid_sizes():
    p = build_grid_partition(unit, [30, 30])
    assert p.n_states == 901
    one = build_grid_partition(Rect([0], [1]), [1], reach_box=Rect([0], [1]))
    assert one.n_states == 2 and one.reach_indices == {0}


def test_reach_indices_hand_enumerated():
    p = build_grid_partition(unit, [2, 2], reach_box=Rect([0.5, 0.5], [1, 1]))
    # row-major: (0,0)=0, (0,1)=1, (1,0)=2, (1,1)=3
    assert p.reach_indices == {3}
    assert p.region(3) == Rect([0.5, 0.5], [1, 1])
    assert p.region(1) == Rect([0, 0.5], [0.5, 1])


def test_avoid_cells_merge_into_avoid_state():
    p = build_grid_partition(unit, [4, 4], avoid_boxes=[Rect([0.25, 0.25], [0.75, 0.75])])
    assert p.n_safe == 12 and p.n_states == 13
    assert p.locate([0.5, 0.5]) == p.avoid_index
    assert p.locate([0.1, 0.1]) == 0


def test_misaligned_boxes_rejected():
    with pytest.raises(AlignmentError):
        build_grid_partition(unit, [4, 4], reach_box=Rect([0.3, 0.5], [1, 1]))
    with pytest.raises(AlignmentError):
        build_grid_partition(unit, [4, 4], avoid_boxes=[Rect([0.1, 0.1], [0.5, 0.5])])


def test_locate_examples():
    p = build_grid_partition(Rect([0], [1]), [2])
    assert p.locate([0.2]) == 0
    assert p.locate([0.5]) == 1  # shared face goes to the higher cell
    assert p.locate([1.5]) == p.avoid_index
    assert p.locate([-0.01]) == p.avoid_index
    q = build_grid_partition(unit, [3, 3])
    assert q.locate([0.5, 0.5]) == 4
    assert q.locate([2.0, 0.5]) == q.avoid_index


def test_rect_relation_examples():
    assert rect_relation(Rect([0.1, 0.1], [0.2, 0.2]), unit) is Relation.CONTAINED_IN
    assert rect_relation(UNIVERSE, unit) is Relation.INTERSECTS
    assert rect_relation(UNIVERSE, UNIVERSE) is Relation.CONTAINED_IN
    assert rect_relation(Rect([0.5, 0], [1.5, 1]), unit) is Relation.INTERSECTS
    assert rect_relation(Rect([2, 2], [3, 3]), unit) is Relation.DISJOINT
    with pytest.raises(DimensionError):
        rect_relation(Rect([0], [1]), unit)


def test_rect_invariants():
    with pytest.raises(ValueError):
        Rect([1, 0], [0, 1])


boxes = st.tuples(st.floats(-2, 2), st.floats(0, 2), st.floats(-2, 2), st.floats(0, 2)).map(
    lambda t: Rect([t[0], t[2]], [t[0] + t[1], t[2] + t[3]]))


@given(boxes, boxes)
@settings(max_examples=300, deadline=None)
def test_rect_relation_against_interval_oracle(a, b):
    rel = rect_relation(a, b)
    inside = bool(np.all(a.lower >= b.lower) and np.all(a.upper <= b.upper))
    meets = all(overlap_1d(a.lower[i], a.upper[i], b.lower[i], b.upper[i]) for i in range(2))
    expected = Relation.CONTAINED_IN if inside else Relation.INTERSECTS if meets else Relation.DISJOINT
    assert rel is expected
    if rel is Relation.CONTAINED_IN:
        c = grid_corners(a)
        assert np.all((c >= b.lower) & (c <= b.upper))
    if rel is Relation.DISJOINT:
        pts = np.random.default_rng(0).uniform(a.lower, a.upper, size=(50, 2))
        assert not np.any(np.all((pts >= b.lower) & (pts <= b.upper), axis=1))


def test_partition_coverage_and_disjointness(rng):
    p = build_grid_partition(Rect([0, -1], [2, 1]), [7, 5], reach_box=None)
    x = rng.uniform(p.safe_box.lower, p.safe_box.upper, size=(10_000, 2))
    s = p.locate_many(x)
    assert np.all((s >= 0) & (s < p.n_safe))
    lo, hi = p.region_bounds()
    assert np.all((x >= lo[s]) & (x <= hi[s]))
    for i in range(p.n_safe):
        for j in range(i + 1, p.n_safe):
            inter = np.minimum(hi[i], hi[j]) - np.maximum(lo[i], lo[j])
            assert not np.all(inter > 0)
    assert np.isclose(np.prod(hi - lo, axis=1).sum(), p.safe_box.volume())


def test_footprint_semantics():
    p = build_grid_partition(unit, [2, 2])
    # closed regions: a box touching the centre point meets all four cells
    assert p.footprint(Rect([0.5, 0.5], [0.5, 0.5])).tolist() == [0, 1, 2, 3]
    assert p.footprint(Rect([0.1, 0.1], [0.2, 0.2])).tolist() == [0]
    assert p.footprint(Rect([0.9, 0.9], [1.2, 0.95])).tolist() == [3, 4]
    assert p.footprint(Rect([3, 3], [4, 4])).tolist() == [4]
    assert p.footprint(UNIVERSE).tolist() == [0, 1, 2, 3, 4]


def test_coarse_cover_blocks():
    p = build_grid_partition(Rect([0], [1]), [6])
    assert coarse_cover(p, 2) == [(0, 1), (2, 3), (4, 5)]
    q = build_grid_partition(unit, [3, 3])
    cover = coarse_cover(q, 2)
    assert sorted(s for b in cover for s in b) == list(range(9))
    assert cover[0] == (0, 1, 3, 4)


def test_partition_round_trip():
    p = build_grid_partition(unit, [3, 4], reach_box=Rect([2 / 3, 0.75], [1, 1]),
                             avoid_boxes=[Rect([0, 0], [1 / 3, 0.25])])
    q = StatePartition.from_dict(p.to_dict())
    assert q.reach_indices == p.reach_indices and q.n_states == p.n_states
    assert all(a == b for a, b in zip(p.regions, q.regions))
