import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochabs.geometry import UNIVERSE, Rect
from stochabs.systems import AffineSystem, CatalogError, builtin_systems, make_system, reach, trig_range


def test_catalog_contents():
    cat = builtin_systems()
    assert {"example1", "affine2d", "unicycle3d", "rooms_n"} <= set(cat)
    with pytest.raises(CatalogError):
        make_system("no_such_system")
    for n in (2, 3, 4):
        sys, noise = make_system(f"rooms_{n}")
        assert sys.dim == n and noise.dim == n


def test_example1_point_map():
    sys, _ = make_system("example1")
    assert len(sys.actions) == 1
    x = sys.f([0.0, 0.0], sys.actions[0].value, [0.0])
    # A @ 0 + B * 1 + G * 0
    np.testing.assert_allclose(x[0], [0.25, 0.7], atol=1e-15)


def test_affine_identity():
    sys, _ = make_system("affine2d", B=np.zeros((2, 2)), G=np.zeros((2, 2)))
    x = np.array([[0.3, -0.7], [2.0, 5.0]])
    np.testing.assert_array_equal(sys.step(x, [0, 3], np.ones((2, 2))), x)
    lo, hi = sys.interval(np.array([0.1, 0.2]), np.array([0.3, 0.4]), *(np.zeros(2),) * 2,
                          -np.ones(2), np.ones(2))
    np.testing.assert_allclose(lo, [0.1, 0.2])
    np.testing.assert_allclose(hi, [0.3, 0.4])


def test_one_dimensional_affine_box():
    sys = AffineSystem("half", [[0.5]], [[0.0]], [[1.0]], actions=(make_system("example1")[0].actions[0],))
    box = reach(sys, Rect([0.0], [1.0]), 0, Rect([-0.1], [0.1]))
    assert box.lower[0] == pytest.approx(-0.1, abs=1e-11) and box.upper[0] == pytest.approx(0.6, abs=1e-11)
    # dense-sample reference for the tight hull
    x = np.linspace(0, 1, 201)[:, None]
    w = np.linspace(-0.1, 0.1, 201)[None, :]
    y = 0.5 * x + w
    assert y.min() == pytest.approx(-0.1) and y.max() == pytest.approx(0.6)


def test_tail_cell_reaches_everything():
    sys, _ = make_system("affine2d")
    assert reach(sys, Rect([0, 0], [0.1, 0.1]), 0, UNIVERSE) is UNIVERSE


def test_quadrant_trig_range():
    c_lo, c_hi, s_lo, s_hi = trig_range(0.0, np.pi / 2)
    assert (c_lo, c_hi, s_lo, s_hi) == pytest.approx((0.0, 1.0, 0.0, 1.0), abs=1e-15)
    # range containing a maximum of cos
    c_lo, c_hi, _, _ = trig_range(-0.5, 0.5)
    assert c_hi == 1.0 and c_lo == pytest.approx(np.cos(0.5))


@given(st.floats(-10, 10), st.floats(0, 7))
@settings(max_examples=200, deadline=None)
def test_trig_range_contains_samples(a, width):
    c_lo, c_hi, s_lo, s_hi = trig_range(a, a + width)
    th = np.linspace(a, a + width, 257)
    assert np.all(np.cos(th) >= c_lo - 1e-12) and np.all(np.cos(th) <= c_hi + 1e-12)
    assert np.all(np.sin(th) >= s_lo - 1e-12) and np.all(np.sin(th) <= s_hi + 1e-12)


BOXES = {
    "example1": (Rect([-2, -4], [0, -3.04]), Rect([-0.2], [0.2])),
    "affine2d": (Rect([0.2, 0.3], [0.3, 0.35]), Rect([-0.5, 0.1], [0.2, 0.9])),
    "unicycle3d": (Rect([0.0, 0.0, -0.4], [0.2, 0.1, 1.9]), Rect([-0.3, -0.2], [0.4, 0.5])),
    "rooms_2": (Rect([18, 19], [19, 20.5]), Rect([-0.02, -0.01], [0.01, 0.03])),
    "rooms_3": (Rect([18, 19, 20], [19, 20.5, 21]), Rect([-0.02, -0.01, 0.0], [0.01, 0.03, 0.02])),
    "rooms_4": (Rect([15, 19, 20, 22], [19, 20.5, 21, 22.5]), Rect([-0.02, -0.01, 0.0, -0.03], [0.01, 0.03, 0.02, 0.0])),
}


@pytest.mark.parametrize("name", sorted(BOXES))
def test_reach_soundness_fuzz(name):
    sys, _ = make_system(name)
    s, c = BOXES[name]
    rng = np.random.default_rng(11)
    for a in range(len(sys.actions)):
        box = reach(sys, s, a, c)
        x = rng.uniform(s.lower, s.upper, size=(10_000, s.dim))
        w = rng.uniform(c.lower, c.upper, size=(10_000, c.dim))
        y = sys.step(x, a, w)
        assert np.all(y >= box.lower) and np.all(y <= box.upper)


@pytest.mark.parametrize("name", sorted(BOXES))
def test_reach_monotone(name):
    sys, _ = make_system(name)
    s, c = BOXES[name]
    big_s = Rect(s.lower - 0.1, s.upper + 0.05)
    big_c = Rect(c.lower - 0.01, c.upper + 0.02)
    for a in range(len(sys.actions)):
        small, big = reach(sys, s, a, c), reach(sys, big_s, a, big_c)
        assert np.all(big.lower <= small.lower) and np.all(big.upper >= small.upper)


def test_unknown_rooms_size():
    with pytest.raises(ValueError):
        make_system("rooms_n", n=5)
