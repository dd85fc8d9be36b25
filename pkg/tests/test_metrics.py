import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moreaugrad.errors import DegenerateInputError, InvalidInputError
from moreaugrad.metrics import (
    CSV_COLUMNS,
    default_k,
    evaluate_pairs,
    normalized_l2_distance,
    ssim,
    ssim_index,
    topk_intersection,
)
from moreaugrad.numerics import make_rng
from oracles import naive_ssim


maps = arrays(np.float64, st.integers(2, 30), elements=st.floats(-10, 10, allow_nan=False))


def test_distance_trivial_cases():
    a = np.array([1.0, 2.0, 3.0])
    assert normalized_l2_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert normalized_l2_distance(a, -a) == pytest.approx(2.0, abs=1e-12)
    assert normalized_l2_distance(np.array([1.0, 0]), np.array([0, 1.0])) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_distance_is_scale_invariant():
    a = make_rng(0).standard_normal(20)
    b = make_rng(1).standard_normal(20)
    assert normalized_l2_distance(a, b) == pytest.approx(normalized_l2_distance(7 * a, 0.1 * b), abs=1e-12)


def test_distance_zero_map():
    with pytest.raises(DegenerateInputError):
        normalized_l2_distance(np.zeros(3), np.ones(3))


@given(maps, st.data())
def test_distance_bounds(a, data):
    b = data.draw(arrays(np.float64, a.shape, elements=st.floats(-10, 10, allow_nan=False)))
    if not np.any(a) or not np.any(b):
        return
    assert 0.0 <= normalized_l2_distance(a, b) <= 2.0


def test_topk_hand_cases():
    assert topk_intersection(np.array([5, 4, 3, 2, 1.0]), np.array([1, 2, 3, 4, 5.0]), 2) == 0.0
    assert topk_intersection(np.array([5, 4, 3, 2, 1.0]), np.array([4, 5, 0, 0, 0.0]), 2) == 1.0
    assert topk_intersection(np.array([1, 1, 1, 1.0]), np.array([0, 1, 0, 1.0]), 2) == 0.5
    assert topk_intersection(np.array([-9, 1, 2.0]), np.array([9, 0, 0.0]), 1) == 1.0


def test_topk_channels_are_summed():
    a = np.zeros((2, 2, 2))
    a[0, 0, 0], a[1, 0, 0] = 1.0, -1.0
    a[0, 1, 1] = 1.5
    b = np.zeros((2, 2, 2))
    b[1, 0, 0] = 3.0
    assert topk_intersection(a, b, 1) == 1.0


def test_topk_invalid_k():
    with pytest.raises(InvalidInputError):
        topk_intersection(np.ones(4), np.ones(4), 5)
    with pytest.raises(InvalidInputError):
        topk_intersection(np.ones(4), np.ones(4), 0)


@given(maps, st.data())
def test_topk_range_and_self(a, data):
    k = data.draw(st.integers(1, a.size))
    assert topk_intersection(a, a, k) == 1.0
    b = data.draw(arrays(np.float64, a.shape, elements=st.floats(-10, 10, allow_nan=False)))
    assert 0.0 <= topk_intersection(a, b, k) <= 1.0


def test_ssim_matches_naive_reference():
    rng = make_rng(0)
    worst = 0.0
    for _ in range(100):
        shape = tuple(rng.integers(7, 13, size=2))
        x, y = rng.random(shape), rng.random(shape)
        if rng.random() < 0.3:
            y = np.clip(x + 0.05 * rng.standard_normal(shape), 0, 1)
        worst = max(worst, abs(ssim_index(x, y) - naive_ssim(x, y)))
    assert worst <= 1e-9


def test_ssim_identity_and_range():
    rng = make_rng(1)
    a = rng.standard_normal((1, 8, 8))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    s = ssim(a, rng.standard_normal((1, 8, 8)))
    assert -1.0 <= s <= 1.0


def test_ssim_rejects_small_or_flat():
    with pytest.raises(InvalidInputError):
        ssim(np.ones((6, 6)), np.ones((6, 6)))
    with pytest.raises(InvalidInputError):
        ssim(np.ones(64), np.ones(64))


def test_default_k():
    assert default_k((1, 8, 8)) == 6
    assert default_k((3, 224, 224)) == 5018
    assert default_k((2,)) == 1


def test_report_and_csv():
    rng = make_rng(2)
    clean = rng.standard_normal((3, 1, 8, 8))
    report = evaluate_pairs(clean, clean.copy(), "moreau", 0.5)
    assert report.k == 6
    assert report.median("normalized_distance") == 0.0
    assert report.mean("topk_ratio") == 1.0
    text = report.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1].startswith("0,moreau,0.5,0.0,1.0,")
    assert len(lines) == 4


def test_report_vector_maps_have_nan_ssim():
    rng = make_rng(3)
    report = evaluate_pairs(rng.standard_normal((2, 5)), rng.standard_normal((2, 5)))
    assert np.all(np.isnan(report.column("ssim")))
