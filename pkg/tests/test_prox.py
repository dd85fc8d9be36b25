import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moreaugrad.errors import InvalidInputError, InvalidPartitionError
from moreaugrad.prox import GroupPartition, grid_partition, group_soft_threshold, soft_threshold

finite = st.floats(-100, 100, allow_nan=False)
alphas = st.floats(0, 50, allow_nan=False)


def test_soft_threshold_example():
    out = soft_threshold(np.array([2.0, -0.5, -3.0]), 1.0)
    np.testing.assert_array_equal(out, [1.0, 0.0, -2.0])


def test_soft_threshold_identity_at_zero():
    v = np.array([0.3, -2.0, 0.0, 7.5])
    np.testing.assert_array_equal(soft_threshold(v, 0.0), v)


def test_soft_threshold_boundary_maps_to_zero():
    assert soft_threshold(np.array([1.0, -1.0]), 1.0).tolist() == [0.0, 0.0]


def test_soft_threshold_negative_alpha():
    with pytest.raises(InvalidInputError):
        soft_threshold(np.ones(3), -1e-9)


@pytest.mark.parametrize("v, alpha", [(2.3, 1.0), (-0.4, 0.7), (-6.25, 2.5), (0.0, 0.3), (9.1, 0.05)])
def test_soft_threshold_matches_grid_argmin(v, alpha):
    u = np.linspace(-10, 10, 200_001)  # step 1e-4
    brute = u[np.argmin(alpha * np.abs(u) + 0.5 * (u - v) ** 2)]
    assert soft_threshold(np.array([v]), alpha)[0] == pytest.approx(brute, abs=1e-4)


def test_group_soft_threshold_examples():
    p = GroupPartition([[0, 1]])
    np.testing.assert_allclose(group_soft_threshold(np.array([3.0, 4.0]), 2.5, p), [1.5, 2.0])
    np.testing.assert_array_equal(group_soft_threshold(np.array([1.0, 1.0]), 2.0, p), [0.0, 0.0])


@given(arrays(np.float64, st.integers(1, 12), elements=finite), alphas)
def test_gst_with_singletons_is_st(v, alpha):
    p = GroupPartition([[i] for i in range(v.size)])
    np.testing.assert_allclose(group_soft_threshold(v, alpha, p), soft_threshold(v, alpha), atol=1e-12)


def test_gst_invalid_partition():
    with pytest.raises(InvalidPartitionError):
        group_soft_threshold(np.ones(4), 1.0, [[0, 1], [1, 2, 3]])
    with pytest.raises(InvalidPartitionError):
        group_soft_threshold(np.ones(5), 1.0, GroupPartition([[0, 1], [2, 3]]))


def test_gst_batched_matches_single():
    p = GroupPartition([[0, 2], [1, 3]])
    batch = np.array([[3.0, 0.1, 4.0, 0.2], [1.0, 5.0, -1.0, 5.0]])
    out = group_soft_threshold(batch, 1.0, p)
    for row, o in zip(batch, out):
        np.testing.assert_array_equal(group_soft_threshold(row, 1.0, p), o)


def _pair(d):
    return st.tuples(
        arrays(np.float64, d, elements=finite), arrays(np.float64, d, elements=finite), alphas
    )


@given(st.integers(1, 10).flatmap(_pair))
def test_operators_non_expansive(args):
    a, b, alpha = args
    p = GroupPartition([np.arange(i, min(i + 3, a.size)) for i in range(0, a.size, 3)])
    for op in (lambda v: soft_threshold(v, alpha), lambda v: group_soft_threshold(v, alpha, p)):
        assert np.linalg.norm(op(a) - op(b)) <= np.linalg.norm(a - b) + 1e-9


@given(arrays(np.float64, st.integers(1, 10), elements=finite), alphas)
def test_shrinkage_and_sign(v, alpha):
    st_v = soft_threshold(v, alpha)
    assert np.linalg.norm(st_v) <= np.linalg.norm(v) + 1e-12
    assert np.all(np.sign(st_v) * np.sign(v) >= 0)
    p = GroupPartition([np.arange(v.size)])
    assert np.linalg.norm(group_soft_threshold(v, alpha, p)) <= np.linalg.norm(v) + 1e-12


@given(arrays(np.float64, st.integers(2, 12), elements=finite), alphas)
def test_gst_zeros_are_group_aligned(v, alpha):
    p = GroupPartition([np.arange(i, min(i + 2, v.size)) for i in range(0, v.size, 2)])
    out = group_soft_threshold(v, alpha, p)
    for g in p.groups:
        block = out[g]
        assert np.all(block == 0) or np.allclose(block / (1 - alpha / np.linalg.norm(v[g])), v[g])


@given(arrays(np.float64, st.integers(1, 10), elements=finite))
def test_large_alpha_kills_everything(v):
    assert not np.any(soft_threshold(v, float(np.max(np.abs(v)))))


def test_grid_partition_exact_tiling():
    p = grid_partition(8, 8, 1, 4)
    assert len(p) == 4
    assert all(g.size == 16 for g in p.groups)


def test_grid_partition_rejects_whole_image_block():
    with pytest.raises(InvalidInputError):
        grid_partition(8, 8, 1, 8)
    with pytest.raises(InvalidInputError):
        grid_partition(8, 8, 1, 0)


def test_grid_partition_boundary_tiles():
    p = grid_partition(6, 6, 1, 4)
    assert sorted(g.size for g in p.groups) == [4, 8, 8, 16]


def test_grid_partition_channels_share_group():
    p = grid_partition(4, 4, 3, 2)
    assert len(p) == 4
    # pixel (1, 2) in every channel -> tile (0, 1)
    idx = [c * 16 + 1 * 4 + 2 for c in range(3)]
    assert len(set(p.labels[idx])) == 1
