import time

import numpy as np
import pytest

from guidedfilter import filters as flt
from guidedfilter import verify
from oracles import naive_mean, random_image


def _grid_3x3():
    return np.arange(1.0, 10.0).reshape(3, 3, 1)


# --- box sums ---------------------------------------------------------------

def test_box_sum_hand_values():
    out = flt.box_sum(_grid_3x3(), 1)
    assert out[1, 1, 0] == 45.0
    assert out[0, 0, 0] == 1 + 2 + 4 + 5


def test_box_sum_radius_zero_is_identity():
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 1, (7, 5, 2))
    assert np.array_equal(flt.box_sum(t, 0), t)


def test_naive_box_sum_hand_values():
    out = flt.naive_box_sum(_grid_3x3(), 1)
    assert out[1, 1, 0] == 45.0
    assert out[0, 0, 0] == 12.0


def test_naive_box_sum_degenerate_image():
    t = np.array([[[3.5]]])
    for r in (0, 1, 10):
        assert np.array_equal(flt.naive_box_sum(t, r), t)


def test_naive_box_sum_full_coverage_window():
    out = flt.naive_box_sum(np.ones((2, 2, 1)), 5)
    assert np.all(out == 4.0)


@pytest.mark.parametrize("r", [0, 1, 4, 17])
def test_box_sum_matches_naive(r):
    t = random_image(np.random.default_rng(10 + r), 64, 64, 3)
    fast = flt.box_sum(t, r)
    slow = flt.naive_box_sum(t, r)
    rel = np.abs(fast - slow) / np.maximum(np.abs(slow), 1e-300)
    assert rel.max() <= 1e-9


def test_box_sum_rejects_bad_radius():
    t = np.ones((2, 2, 1))
    with pytest.raises(ValueError):
        flt.box_sum(t, -1)
    with pytest.raises(ValueError):
        flt.box_sum(t, 1.5)


def test_summed_area_table_borders_and_lookups():
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 1, (5, 6, 2))
    sat = flt.summed_area_table(t)
    assert np.all(sat[0] == 0.0) and np.all(sat[:, 0] == 0.0)
    # four-lookup rectangle sums against direct summation
    for (y0, y1, x0, x1) in [(0, 5, 0, 6), (1, 3, 2, 5), (4, 5, 0, 1)]:
        rect = sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]
        direct = t[y0:y1, x0:x1].sum(axis=(0, 1))
        assert np.abs(rect - direct).max() <= 1e-9 * max(1.0, np.abs(direct).max())


def test_window_counts_equal_box_sum_of_ones():
    counts = flt.window_counts(9, 7, 2)
    assert np.array_equal(counts, flt.box_sum(np.ones((9, 7, 1)), 2))


# --- mean filter ------------------------------------------------------------

def test_mean_filter_preserves_constants():
    for c in (0.5, 1.0, 0.737, 3.25):
        t = np.full((32, 32, 2), c)
        for r in (1, 3, 9):
            assert np.abs(flt.mean_filter(t, r) - c).max() <= 1e-12


def test_mean_filter_hand_values():
    out = flt.mean_filter(_grid_3x3(), 1)
    assert out[0, 0, 0] == pytest.approx(3.0, abs=1e-12)
    assert out[1, 1, 0] == pytest.approx(5.0, abs=1e-12)


def test_mean_filter_matches_naive_oracle():
    t = random_image(np.random.default_rng(4), 32, 32, 1)
    got = flt.mean_filter(t, 3)
    want = naive_mean(t, 3)
    assert np.abs(got - want).max() <= 1e-9


def test_mean_filter_not_idempotent_on_non_constants():
    t = _grid_3x3()
    once = flt.mean_filter(t, 1)
    twice = flt.mean_filter(once, 1)
    assert np.abs(once - twice).max() > 1e-3


# --- mean filter adjoint ----------------------------------------------------

def test_mean_adjoint_equals_filter_for_interior_support():
    # support margin > 2r: every window the support touches is full-size
    r = 2
    g = np.zeros((12, 12, 1))
    g[5:7, 5:7, 0] = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert np.allclose(
        flt.mean_filter_adjoint(g, r), flt.mean_filter(g, r), rtol=0, atol=1e-14
    )


@pytest.mark.parametrize("r", [1, 2, 5])
def test_mean_adjoint_dot_identity(r):
    rng = np.random.default_rng(20 + r)
    u = rng.standard_normal((16, 16, 2))
    v = rng.standard_normal((16, 16, 2))
    lhs = float(np.vdot(u, flt.mean_filter(v, r)))
    rhs = float(np.vdot(flt.mean_filter_adjoint(u, r), v))
    assert abs(lhs - rhs) <= 1e-9 * (abs(lhs) + 1.0)


def test_mean_adjoint_is_dense_transpose():
    r = 1
    fwd = verify.dense_operator(lambda t: flt.mean_filter(t, r), (5, 5, 1))
    adj = verify.dense_operator(lambda t: flt.mean_filter_adjoint(t, r), (5, 5, 1))
    assert np.abs(adj - fwd.T).max() <= 1e-12


def test_mean_adjoint_of_ones_matches_transpose_row_sums():
    # adjoint(1)[p] sums 1/N over the windows containing p
    r = 1
    fwd = verify.dense_operator(lambda t: flt.mean_filter(t, r), (5, 5, 1))
    want = fwd.T @ np.ones(25)
    got = flt.mean_filter_adjoint(np.ones((5, 5, 1)), r).ravel()
    assert np.abs(got - want).max() <= 1e-12


# --- bilinear resize --------------------------------------------------------

def test_bilinear_hand_values():
    row = np.array([0.0, 2.0]).reshape(1, 2, 1)
    out = flt.bilinear_resize(row, 1, 4)
    assert out.ravel().tolist() == [0.0, 0.5, 1.5, 2.0]


def test_bilinear_same_shape_is_identity():
    rng = np.random.default_rng(5)
    t = rng.uniform(0, 1, (6, 9, 3))
    assert np.array_equal(flt.bilinear_resize(t, 6, 9), t)


def test_bilinear_constant_stays_constant():
    t = np.full((3, 5, 2), 0.7318)
    for dims in [(7, 11), (2, 3), (9, 5)]:
        out = flt.bilinear_resize(t, *dims)
        assert np.array_equal(out, np.full((*dims, 2), 0.7318))


def test_bilinear_rejects_bad_dims():
    t = np.ones((2, 2, 1))
    with pytest.raises(ValueError):
        flt.bilinear_resize(t, 0, 2)


def test_bilinear_adjoint_dot_identity_up_and_down():
    rng = np.random.default_rng(6)
    for in_dims, out_dims in [((8, 8), (16, 16)), ((16, 16), (8, 8)), ((5, 9), (13, 4))]:
        v = rng.standard_normal((*in_dims, 2))
        u = rng.standard_normal((*out_dims, 2))
        lhs = float(np.vdot(u, flt.bilinear_resize(v, *out_dims)))
        rhs = float(np.vdot(flt.bilinear_resize_adjoint(u, *in_dims), v))
        assert abs(lhs - rhs) <= 1e-9 * (abs(lhs) + 1.0)


def test_bilinear_adjoint_is_dense_transpose():
    fwd = verify.dense_operator(lambda t: flt.bilinear_resize(t, 4, 4), (2, 2, 1))
    adj = verify.dense_operator(
        lambda g: flt.bilinear_resize_adjoint(g, 2, 2), (4, 4, 1)
    )
    assert fwd.shape == (16, 4)
    assert np.abs(adj - fwd.T).max() <= 1e-12


def test_bilinear_adjoint_same_shape_is_identity():
    rng = np.random.default_rng(7)
    g = rng.standard_normal((5, 4, 2))
    assert np.array_equal(flt.bilinear_resize_adjoint(g, 5, 4), g)


def test_bilinear_adjoint_shape_validation():
    with pytest.raises(ValueError):
        flt.bilinear_resize_adjoint(np.ones((4, 4, 1)), 0, 2)


# --- performance shape ------------------------------------------------------

def test_box_sum_runtime_independent_of_radius():
    t = random_image(np.random.default_rng(8), 1024, 1024, 1)
    flt.box_sum(t, 1)  # warm up caches/allocator

    def median_time(r, reps=5):
        samples = []
        for _ in range(reps):
            start = time.perf_counter()
            flt.box_sum(t, r)
            samples.append(time.perf_counter() - start)
        return float(np.median(samples))

    t1 = median_time(1)
    t32 = median_time(32)
    assert t32 <= 1.5 * t1, f"r=32 took {t32:.4f}s vs r=1 {t1:.4f}s"
