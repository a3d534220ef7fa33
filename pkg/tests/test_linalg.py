import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from triadapt.exceptions import ConfigurationError, DimensionError
from triadapt.linalg import (
    RngState,
    apply_lower_mask,
    apply_upper_mask,
    frobenius_norm,
    gaussian_matrix,
    matmul,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    M = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), M), M)


def test_matmul_hand_example():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), np.array([[17.0], [39.0]]))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"4x2 by 3x5"):
        matmul(np.ones((4, 2)), np.ones((3, 5)))


def test_matmul_associative():
    g = np.random.default_rng(0)
    for _ in range(20):
        # well-conditioned: identity plus a small perturbation
        a, b, c = (np.eye(8) + 0.1 * g.standard_normal((8, 8)) for _ in range(3))
        lhs = matmul(matmul(a, b), c)
        rhs = matmul(a, matmul(b, c))
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)


@pytest.mark.parametrize(
    "m, expected",
    [
        (np.zeros((3, 2)), 0.0),
        (np.eye(4), 2.0),
        (np.array([[1.0, 2.0], [0.0, 3.0]]), math.sqrt(14)),
    ],
)
def test_frobenius_examples(m, expected):
    assert frobenius_norm(m) == pytest.approx(expected, rel=1e-15, abs=0)


@given(arrays(np.float64, (4, 3), elements=finite), st.floats(-100, 100, allow_nan=False))
def test_frobenius_homogeneous(m, c):
    lhs = frobenius_norm(c * m)
    rhs = abs(c) * frobenius_norm(m)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


def test_gaussian_statistics():
    m = gaussian_matrix(100, 100, 0.02, RngState(42))
    assert abs(m.mean()) <= 0.002
    assert 0.018 <= m.std() <= 0.022


def test_gaussian_deterministic():
    a = gaussian_matrix(5, 7, 0.02, RngState(9))
    b = gaussian_matrix(5, 7, 0.02, RngState(9))
    assert a.tobytes() == b.tobytes()


def test_gaussian_advances_stream():
    rng = RngState(3)
    a = gaussian_matrix(2, 2, 1.0, rng)
    b = gaussian_matrix(2, 2, 1.0, rng)
    assert rng.position == 8
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("rows, cols, std", [(0, 3, 0.1), (3, 0, 0.1), (2, 2, 0.0), (2, 2, -1.0)])
def test_gaussian_bad_arguments(rows, cols, std):
    with pytest.raises(ConfigurationError):
        gaussian_matrix(rows, cols, std, RngState(0))


def test_spawned_streams_differ():
    base = RngState(5)
    assert base.spawn(1).seed == 5 ^ 1
    assert not np.array_equal(base.spawn(1).standard_normal(4), base.spawn(2).standard_normal(4))


def test_mask_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(apply_lower_mask(m), [[1, 0], [3, 4]])
    assert np.array_equal(apply_upper_mask(m), [[0, 2], [0, 0]])


def test_mask_rejects_non_square():
    with pytest.raises(DimensionError):
        apply_lower_mask(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        apply_upper_mask(np.ones((3, 2)))


@settings(max_examples=50)
@given(st.integers(1, 7).flatmap(lambda r: arrays(np.float64, (r, r), elements=finite)))
def test_masks_partition(m):
    assert np.array_equal(apply_lower_mask(m) + apply_upper_mask(m), m)
