import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cards.core import (
    DesignMatrix,
    GroupedCoefficients,
    Partition,
    standardize,
    validate_partition,
)
from cards.errors import EmptyGroupError, MissingIndexError, OverlapError, ZeroColumnError


def test_standardize_ones_column_is_fixed_point():
    D = standardize(np.ones((4, 1)))
    np.testing.assert_array_equal(D.values, np.ones((4, 1)))


def test_standardize_sparse_column_unchanged():
    x = np.array([[2.0], [0.0], [0.0], [0.0]])
    np.testing.assert_allclose(standardize(x).values, x, rtol=0, atol=1e-15)


def test_standardize_zero_column_rejected():
    X = np.column_stack([np.ones(4), np.zeros(4)])
    with pytest.raises(ZeroColumnError) as e:
        standardize(X)
    assert e.value.column == 1


def test_validate_partition_examples():
    validate_partition(Partition(((0, 1), (2,))), 3)
    with pytest.raises(OverlapError) as e:
        validate_partition(Partition(((0, 1), (1, 2))), 3)
    assert e.value.index == 1  # 1-based index 2
    with pytest.raises(MissingIndexError) as e:
        validate_partition(Partition(((0,),)), 3)
    assert e.value.index == 1
    with pytest.raises(EmptyGroupError):
        validate_partition(Partition(((0, 1, 2), ())), 3)


def test_design_matrix_is_read_only():
    D = DesignMatrix(np.eye(3))
    with pytest.raises(ValueError):
        D.values[0, 0] = 5.0


def test_design_rejects_nonfinite():
    with pytest.raises(ValueError):
        DesignMatrix(np.array([[1.0, np.nan]]))


matrices = st.integers(2, 8).flatmap(
    lambda n: st.integers(1, 5).flatmap(
        lambda p: st.lists(st.floats(-50, 50, allow_nan=False), min_size=n * p, max_size=n * p).map(
            lambda v: np.array(v).reshape(n, p))))


@settings(max_examples=60, deadline=None)
@given(matrices, st.booleans())
def test_standardize_idempotent(X, center):
    Xc = X - X.mean(axis=0) if center else X
    if np.any(np.linalg.norm(Xc, axis=0) < 1e-6):
        return
    D1 = standardize(X, center=center)
    D2 = standardize(D1, center=center)
    np.testing.assert_allclose(D2.values, D1.values, rtol=0, atol=1e-12 * max(1, np.abs(D1.values).max()))
    np.testing.assert_allclose(np.linalg.norm(D1.values, axis=0), np.sqrt(X.shape[0]), rtol=1e-10)


@settings(max_examples=60, deadline=None)
@given(matrices, st.data())
def test_rescaling_round_trip(X, data):
    if np.any(np.linalg.norm(X, axis=0) < 1e-6):
        return
    D = standardize(X)
    beta_std = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=X.shape[1], max_size=X.shape[1])))
    beta_orig = D.to_original(beta_std)
    # same fitted values in both parametrisations
    np.testing.assert_allclose(X @ beta_orig, D.values @ beta_std, atol=1e-9 * (1 + np.abs(X).max() * 10))
    np.testing.assert_allclose(D.to_stored(beta_orig), beta_std, rtol=1e-10, atol=1e-12)


def test_intercept_recovers_centering(rng):
    X = rng.standard_normal((30, 3)) * [1, 5, 0.2] + [3, -1, 10]
    beta = np.array([1.0, -2.0, 0.5])
    y = 4.0 + X @ beta
    D = standardize(X, center=True)
    yc = y - y.mean()
    b_std = np.linalg.lstsq(D.values, yc, rcond=None)[0]
    b = D.to_original(b_std)
    np.testing.assert_allclose(b, beta, atol=1e-10)
    assert D.intercept(b, y.mean()) == pytest.approx(4.0, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.booleans())
def test_partition_sizes_cover_p(labels, use_zero):
    P = Partition.from_labels(labels, zero_label=0 if use_zero else None)
    p = len(labels)
    validate_partition(P, p)
    assert sum(P.sizes) + len(P.zero_group) == p


def test_partition_json_is_one_based():
    P = Partition(((0, 2), (1,)), (3,))
    obj = P.to_json()
    assert obj == {"groups": [[1, 3], [2]], "zero_group": [4]}
    assert Partition.from_json(obj) == P
    assert Partition.from_json([[1, 3], [2]]).groups == ((0, 2), (1,))


def test_grouped_coefficients_expand():
    P = Partition.blocks([2, 3])
    g = GroupedCoefficients([-1.0, 2.0], P.sizes)
    np.testing.assert_array_equal(g.expand(P, 5), [-1, -1, 2, 2, 2])
    assert g.increasing
    assert GroupedCoefficients.from_beta(g.expand(P, 5), P).values.tolist() == [-1.0, 2.0]
