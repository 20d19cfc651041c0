import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amodal import masks as M
from oracles import boundary_naive, dilate_naive, iou_naive


def small_masks(max_side=8):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda hw: arrays(bool, hw)
    )


def mask_pairs(max_side=8):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda hw: st.tuples(arrays(bool, hw), arrays(bool, hw))
    )


class TestRle:
    def test_all_zero(self):
        assert M.rle_encode(np.zeros((3, 3))).counts == [9]

    def test_all_one(self):
        assert M.rle_encode(np.ones((3, 3))).counts == [0, 9]

    def test_single_cell_column_major(self):
        m = np.zeros((2, 2), bool)
        m[0, 1] = True
        assert M.rle_encode(m).counts == [2, 1, 1]

    def test_decode_examples(self):
        assert not M.rle_decode(M.RleMask(3, 3, [9])).any()
        assert M.rle_decode(M.RleMask(3, 3, [0, 9])).all()
        expected = np.zeros((2, 2), bool)
        expected[0, 1] = True
        np.testing.assert_array_equal(M.rle_decode(M.RleMask(2, 2, [2, 1, 1])), expected)

    def test_decode_rejects_bad_sum(self):
        with pytest.raises(M.RleError):
            M.rle_decode(M.RleMask(3, 3, [4, 4]))

    def test_json_fragment(self):
        m = np.eye(3, dtype=bool)
        obj = M.rle_encode(m).to_json()
        assert obj == {"size": [3, 3], "counts": [0, 1, 3, 1, 3, 1]}
        np.testing.assert_array_equal(M.rle_decode(M.RleMask.from_json(obj)), m)

    @given(small_masks(16))
    def test_round_trip(self, m):
        rle = M.rle_encode(m)
        assert sum(rle.counts) == m.size
        assert all(c > 0 for c in rle.counts[1:])
        np.testing.assert_array_equal(M.rle_decode(rle), m)


class TestDilate:
    def test_single_cell(self):
        m = np.zeros((5, 5), bool)
        m[2, 2] = True
        expected = np.zeros((5, 5), bool)
        expected[1:4, 1:4] = True
        np.testing.assert_array_equal(M.dilate(m, 1), expected)

    @given(small_masks())
    def test_radius_zero_identity(self, m):
        np.testing.assert_array_equal(M.dilate(m, 0), m)

    def test_saturation(self):
        assert M.dilate(np.ones((4, 6)), 3).all()

    @given(small_masks(), st.integers(0, 4))
    def test_matches_naive(self, m, r):
        np.testing.assert_array_equal(M.dilate(m, r), dilate_naive(m, r))

    @given(mask_pairs(), st.integers(0, 3))
    def test_monotone(self, ab, r):
        a, b = ab
        sub = a & b
        assert not (M.dilate(sub, r) & ~M.dilate(a, r)).any()

    @given(small_masks(), st.integers(0, 3), st.integers(0, 3))
    def test_composes(self, m, r1, r2):
        np.testing.assert_array_equal(M.dilate(m, r1 + r2), M.dilate(M.dilate(m, r1), r2))


class TestBoundary:
    def test_far_apart_is_empty(self):
        a = np.zeros((10, 10), bool)
        b = np.zeros((10, 10), bool)
        a[:, 0] = True
        b[:, 5] = True
        assert not M.occlusion_boundary(a, b, 2).any()

    @given(small_masks(), st.integers(1, 3))
    def test_identical_masks(self, m, r):
        np.testing.assert_array_equal(M.occlusion_boundary(m, m, r), M.dilate(m, r))

    def test_strips(self):
        a = np.zeros((5, 5), bool)
        b = np.zeros((5, 5), bool)
        a[:, 1] = True
        b[:, 3] = True
        got = M.occlusion_boundary(a, b, 1)
        expected = np.zeros((5, 5), bool)
        expected[:, 2] = True
        np.testing.assert_array_equal(got, expected)
        np.testing.assert_array_equal(got, boundary_naive(a, b, 1))

    @given(mask_pairs(), st.integers(1, 3))
    def test_symmetric_and_naive(self, ab, r):
        a, b = ab
        got = M.occlusion_boundary(a, b, r)
        np.testing.assert_array_equal(got, M.occlusion_boundary(b, a, r))
        np.testing.assert_array_equal(got, boundary_naive(a, b, r))

    def test_shape_mismatch(self):
        with pytest.raises(M.MaskShapeError):
            M.occlusion_boundary(np.ones((2, 2)), np.ones((2, 3)))


class TestIou:
    def test_identical(self):
        m = np.zeros((4, 4), bool)
        m[1:3, 1:3] = True
        assert M.iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[0, 0] = b[3, 3] = True
        assert M.iou(a, b) == 0.0

    def test_shifted_rectangle(self):
        a = np.zeros((4, 8), bool)
        a[1:3, 1:4] = True
        b = np.roll(a, 2, axis=1)
        assert M.iou(a, b) == pytest.approx(0.2, abs=0)

    def test_both_empty(self):
        assert M.iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    @given(mask_pairs())
    def test_symmetric_bounded_naive(self, ab):
        a, b = ab
        v = M.iou(a, b)
        assert v == M.iou(b, a)
        assert 0.0 <= v <= 1.0
        assert v == iou_naive(a, b)


class TestAdjacent:
    def test_touching(self):
        a = np.zeros((5, 5), bool)
        b = np.zeros((5, 5), bool)
        a[:, :2] = True
        b[:, 2:] = True
        assert M.adjacent(a, b, 1)

    def test_one_column_gap(self):
        a = np.zeros((5, 5), bool)
        b = np.zeros((5, 5), bool)
        a[:, 1] = True
        b[:, 3] = True
        assert M.adjacent(a, b, 1)

    def test_far(self):
        a = np.zeros((5, 9), bool)
        b = np.zeros((5, 9), bool)
        a[:, 0] = True
        b[:, 5] = True
        assert not M.adjacent(a, b, 2)


@given(small_masks(), st.integers(-9, 9), st.integers(-9, 9))
@settings(max_examples=50)
def test_translate_matches_loop(m, dy, dx):
    got = M.translate(m, (dy, dx))
    h, w = m.shape
    expected = np.zeros_like(m)
    for r in range(h):
        for c in range(w):
            if m[r, c] and 0 <= r + dy < h and 0 <= c + dx < w:
                expected[r + dy, c + dx] = True
    np.testing.assert_array_equal(got, expected)
