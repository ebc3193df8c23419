import numpy as np
import pytest

from stochabs.abstraction import (KINDS, Abstraction, CoverError, TransitionBounds, build_abstraction,
                                  compute_footprints, membership, memory_report, row_memory, transition_bounds)
from stochabs.geometry import Rect, build_grid_partition, coarse_cover, partition_from_edges
from stochabs.noise import UniformBox, build_noise_partition
from stochabs.systems import Action, AffineSystem, make_system

FIFTH = 0.2


def test_six_region_singleton_bounds(ex1):
    idx, lo, up = ex1.abstraction("IMDP").singletons(0, 0)
    assert idx.tolist() == [0, 1, 2, 3, 4, 5]
    np.testing.assert_allclose(lo, 0.0, atol=0)
    np.testing.assert_allclose(up, [0.2, 0.4, 0.4, 0.4, 0.4, 0.2], atol=1e-12)
    b = transition_bounds(ex1.system, ex1.partition, ex1.noise, 0, 0, [0])
    assert b.lower == 0.0 and abs(b.upper - FIFTH) <= 1e-12


def test_six_region_cluster_bounds(ex1):
    b = transition_bounds(ex1.system, ex1.partition, ex1.noise, 0, 0, [4, 5])
    assert abs(b.lower - FIFTH) <= 1e-12
    everything = transition_bounds(ex1.system, ex1.partition, ex1.noise, 0, 0, range(ex1.partition.n_states))
    assert (everything.lower, everything.upper) == (1.0, 1.0)


def test_six_region_smdp_row(ex1):
    row = ex1.abstraction("SMDP").set_row(0, 0)
    assert [q.tolist() for q, _ in row] == [[i, i + 1] for i in range(5)]
    assert all(abs(m - FIFTH) <= 1e-12 for _, m in row)


def test_six_region_mimdp_and_cover_rows(ex1):
    cl = ex1.abstraction("MIMDP").clusters(0, 0)
    assert sorted(tuple(m.tolist()) for m, _ in cl) == [(i, i + 1) for i in range(5)]
    for m, b in cl:
        assert abs(b.lower - FIFTH) <= 1e-12
    cover = ex1.abstraction("TwoIMDP").clusters(0, 0)
    assert [tuple(m.tolist()) for m, _ in cover] == [(0, 1), (2, 3), (4, 5)]
    # every block contains one footprint entirely: lower 1/5
    assert all(abs(b.lower - FIFTH) <= 1e-12 for _, b in cover)


def test_split_region_informed_clusters(ex3):
    members = {tuple(m.tolist()) for m, _ in ex3.abstraction("MIMDP").clusters(0, 0)}
    assert (1, 2, 3) in members and (2, 3, 4) in members


def test_avoid_row_is_dirac(ex1):
    n = ex1.partition.n_states
    dirac = np.zeros(n)
    dirac[-1] = 1.0
    other = np.zeros(n)
    other[0] = 1.0
    for kind in KINDS:
        abs_ = ex1.abstraction(kind)
        assert membership(abs_, ex1.partition.avoid_index, 0, dirac)
        assert not membership(abs_, ex1.partition.avoid_index, 0, other)


WITNESSES = {
    "gamma_imdp": ([0.2, 0.4, 0.4, 0, 0, 0, 0], {"IMDP": True, "TwoIMDP": False}),
    "gamma_2imdp": ([0, 0.4, 0.4, 0, 0, 0.2, 0], {"IMDP": True, "TwoIMDP": True, "MIMDP": False, "SMDP": False}),
    "gamma_theta": ([0.1, 0.3, 0.2, 0.2, 0.2, 0, 0], {k: True for k in KINDS}),
}


@pytest.mark.parametrize("name", sorted(WITNESSES))
def test_separation_witnesses(ex1, name):
    gamma, expected = WITNESSES[name]
    for kind, want in expected.items():
        assert membership(ex1.abstraction(kind), 0, 0, np.array(gamma)) is want, kind


def test_split_region_witness(ex3):
    gamma = np.zeros(ex3.partition.n_states)
    gamma[[0, 2, 5]] = 0.2
    gamma[3] = 0.4
    assert membership(ex3.abstraction("MIMDP"), 0, 0, gamma)
    assert not membership(ex3.abstraction("SMDP"), 0, 0, gamma)


def test_membership_rejects_non_distributions(ex1):
    for kind in KINDS:
        abs_ = ex1.abstraction(kind)
        assert not membership(abs_, 0, 0, np.array([0.5, 0.4, 0, 0, 0, 0, 0]))
        assert not membership(abs_, 0, 0, np.array([1.2, -0.2, 0, 0, 0, 0, 0]))
        # avoid is not a successor of s1
        assert not membership(abs_, 0, 0, np.array([0.1, 0.3, 0.2, 0.2, 0.1, 0, 0.1]))


def test_memory_counts_six_region(ex1):
    smdp = row_memory(ex1.abstraction("SMDP"), 0, 0)
    assert smdp["membership_entries"] == 10 and smdp["masses"] == 5
    mi = row_memory(ex1.abstraction("MIMDP"), 0, 0)
    assert mi["bound_pairs"] == 6 + 5 and mi["membership_entries"] == 10


def _contracting_line(n_cells):
    sys = AffineSystem("contract", [[0.25]], [[0.0]], [[0.0]], b=[0.1], actions=(Action.point("a", [0.0]),))
    part = build_grid_partition(Rect([0.0], [float(n_cells)]), [n_cells])
    noise = build_noise_partition(UniformBox((-1.0,), (1.0,)), [3])
    return sys, part, noise


def test_certain_successor_rows():
    sys, part, noise = _contracting_line(1)
    smdp = build_abstraction(sys, part, noise, "SMDP")
    assert all(q.tolist() == [0] for q, _ in smdp.set_row(0, 0))
    sys, part, noise = _contracting_line(2)
    imdp = build_abstraction(sys, part, noise, "IMDP")
    for s in range(2):
        idx, lo, up = imdp.singletons(s, 0)
        assert idx.tolist() == [0] and lo[0] == 1.0 and up[0] == 1.0
    rep = memory_report(imdp)
    assert rep["total_entries"] == part.n_states * 1


def test_cover_validation(ex1):
    with pytest.raises(CoverError):
        build_abstraction(ex1.system, ex1.partition, ex1.noise, "TwoIMDP", None)
    with pytest.raises(CoverError):
        build_abstraction(ex1.system, ex1.partition, ex1.noise, "TwoIMDP", [(0, 1), (1, 2), (3, 4, 5)])
    with pytest.raises(CoverError):
        build_abstraction(ex1.system, ex1.partition, ex1.noise, "TwoIMDP", [(0, 1), (2, 3)])
    with pytest.raises(CoverError):
        build_abstraction(ex1.system, ex1.partition, ex1.noise, "MIMDP", [(0, 1, 2, 3, 4, 5)])


def test_bounds_sanity_everywhere(ex1):
    for kind in ("IMDP", "TwoIMDP", "MIMDP"):
        a = ex1.abstraction(kind)
        assert np.all(a.succ_lo <= a.succ_up)
        for s in range(ex1.partition.n_safe):
            _, lo, up = a.singletons(s, 0)
            assert lo.sum() <= 1 + 1e-12 <= up.sum() + 2e-12
    with pytest.raises(ValueError):
        TransitionBounds(0.6, 0.4)


def _desk_like(n=8):
    sys, model = make_system("affine2d", noise_gain=0.06)
    part = build_grid_partition(Rect([0, 0], [1, 1]), [n, n], Rect([0.75, 0.75], [1, 1]),
                                [Rect([0.375, 0.25], [0.625, 0.5])])
    noise = build_noise_partition(model, [4, 2], [0, 0], 0.9)
    fp = compute_footprints(sys, part, noise)
    abs_ = {k: build_abstraction(sys, part, noise, k, coarse_cover(part, 2) if k == "TwoIMDP" else None,
                                 footprints=fp) for k in KINDS}
    return part, abs_


@pytest.fixture(scope="module")
def desk_like():
    return _desk_like()


def sample_smdp_gamma(smdp, s, a, rng, n):
    """Distributions from random per-cell splits pushed through the cell masses."""
    out = np.zeros((n, smdp.partition.n_states))
    for q, m in smdp.set_row(s, a):
        theta = rng.dirichlet(np.full(q.size, 0.3), size=n) if q.size > 1 else np.ones((n, 1))
        out[:, q] += m * theta
    return out


def test_smdp_samples_lie_in_weaker_sets(desk_like, ex1):
    part, abs_ = desk_like
    rng = np.random.default_rng(4)
    rows = [(int(s), int(a)) for s, a in zip(rng.choice(part.n_safe, 6), rng.integers(0, 8, 6))]
    for s, a in rows:
        for g in sample_smdp_gamma(abs_["SMDP"], s, a, rng, 50):
            for kind in ("MIMDP", "TwoIMDP", "IMDP"):
                assert membership(abs_[kind], s, a, g), (kind, s, a)
    for g in sample_smdp_gamma(ex1.abstraction("SMDP"), 0, 0, rng, 200):
        assert membership(ex1.abstraction("SMDP"), 0, 0, g)
        assert all(membership(ex1.abstraction(k), 0, 0, g) for k in ("MIMDP", "TwoIMDP", "IMDP"))


def test_round_trip_json(tmp_path, desk_like, ex1):
    _, abs_ = desk_like
    for kind in KINDS:
        for a in (abs_[kind], ex1.abstraction(kind)):
            path = tmp_path / f"{kind}.json"
            a.save(path)
            b = Abstraction.load(path)
            for name in ("succ_ptr", "succ_idx", "succ_lo", "succ_up", "clus_ptr", "clus_mem_ptr", "clus_mem",
                         "clus_lo", "clus_up", "q_ptr", "q_idx"):
                u, v = getattr(a, name), getattr(b, name)
                assert (u is None and v is None) or np.array_equal(u, v)
            assert np.array_equal(a.noise.masses, b.noise.masses)
            assert b.partition.reach_indices == a.partition.reach_indices


def test_dimension_mismatch(ex1):
    part = partition_from_edges([[0.0, 1.0]])
    with pytest.raises(ValueError):
        compute_footprints(ex1.system, part, ex1.noise)
