import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snowlayers.postproc import NmsConfig, binarize, nms_vertical


def col(values):
    return np.asarray(values, dtype=float)[:, None]


def test_single_peak_column():
    np.testing.assert_array_equal(nms_vertical(col([0.1, 0.5, 0.3])), col([0, 0.5, 0]))


@pytest.mark.parametrize("values", [[0.1, 0.2, 0.3, 0.4, 0.5], [0.9, 0.7, 0.5, 0.3, 0.1]])
def test_monotone_column_keeps_extremum(values):
    out = nms_vertical(col(values))[:, 0]
    top = int(np.argmax(values))
    assert out[top] == values[top]
    assert np.count_nonzero(out) == 1


@pytest.mark.parametrize("radius", [1, 2, 3])
def test_constant_column_keeps_topmost(radius):
    out = nms_vertical(np.full((7, 2), 0.4), NmsConfig(radius))
    np.testing.assert_array_equal(out[:, 0], [0.4, 0, 0, 0, 0, 0, 0])


def test_columns_are_independent():
    a = np.array([[0.2, 0.9], [0.8, 0.1], [0.3, 0.5]])
    np.testing.assert_array_equal(nms_vertical(a), [[0, 0.9], [0.8, 0], [0, 0.5]])


def test_batch_grid_and_rejections():
    x = np.random.default_rng(0).random((2, 1, 8, 8))
    out = nms_vertical(x)
    assert out.shape == x.shape
    np.testing.assert_array_equal(out[1, 0], nms_vertical(x[1, 0]))
    with pytest.raises(ValueError, match="single-channel"):
        nms_vertical(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        nms_vertical(np.zeros(5))
    with pytest.raises(ValueError, match="radius"):
        NmsConfig(0)


def test_binarize_examples():
    np.testing.assert_array_equal(binarize(np.array([0.4, 0.6]), 0.5), [0, 1])
    x = np.array([0.0, 1e-9, 0.5, 1.0])
    np.testing.assert_array_equal(binarize(x, 0.0), [0, 1, 1, 1])
    np.testing.assert_array_equal(binarize(x, 1.0), [0, 0, 0, 0])
    np.testing.assert_array_equal(binarize(np.array([0.5]), 0.5), [0])  # ties are negative
    for t in (-0.1, 1.1):
        with pytest.raises(ValueError):
            binarize(x, t)


grids = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 5)),
               elements=st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]))


def _brute_keep(a, r):
    keep = np.zeros(a.shape, dtype=bool)
    rows = a.shape[0]
    for j in range(a.shape[1]):
        for i in range(rows):
            above = all(a[i, j] > a[k, j] for k in range(max(0, i - r), i))
            below = all(a[i, j] >= a[k, j] for k in range(i + 1, min(rows, i + r + 1)))
            keep[i, j] = above and below
    return keep


@settings(max_examples=200, deadline=None)
@given(a=grids, r=st.integers(1, 4))
def test_nms_properties(a, r):
    cfg = NmsConfig(r)
    out = nms_vertical(a, cfg)
    keep = _brute_keep(a, r)
    np.testing.assert_array_equal(out, np.where(keep, a, 0.0))
    np.testing.assert_array_equal(nms_vertical(out, cfg), out)
    assert np.all(out <= a)
    for j in range(a.shape[1]):
        survivors = np.nonzero(keep[:, j])[0]
        assert np.all(np.diff(survivors) > r)
