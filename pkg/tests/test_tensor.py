from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from promptfed.tensor import (
    SvdConvergenceError,
    _jacobi_tall,
    as_matrix,
    complete_basis,
    frobenius_norm,
    leading_right_vectors,
    right_singular_basis,
    spectral_norm,
    stream,
    svd,
)

METHODS = ("lapack", "jacobi")


def _orth_err(q):
    return np.abs(q.T @ q - np.eye(q.shape[1])).max()


@pytest.mark.parametrize("method", METHODS)
def test_identity_singular_values(method):
    res = svd(np.eye(3), method)
    np.testing.assert_allclose(res.singular_values, [1, 1, 1], atol=1e-15)


@pytest.mark.parametrize("method", METHODS)
def test_diagonal_gives_signed_permutation(method):
    res = svd(np.diag([3.0, 2.0, 1.0]), method)
    np.testing.assert_allclose(res.singular_values, [3, 2, 1], atol=1e-14)
    np.testing.assert_allclose(np.abs(res.right), np.eye(3), atol=1e-14)


@pytest.mark.parametrize("method", METHODS)
def test_random_wide_matrix_reconstructs(method):
    a = stream(7, "test/svd").standard_normal((5, 8))
    res = svd(a, method)
    assert res.left.shape == (5, 5) and res.right.shape == (8, 8)
    assert frobenius_norm(res.reconstruct() - a) / frobenius_norm(a) <= 1e-9


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("shape", [(4, 16), (8, 32), (8, 64)])
def test_reconstruction_and_orthogonality_over_seeds(method, shape):
    n = 200 if method == "lapack" else 40
    for seed in range(n):
        a = stream(seed, "test/svd-shapes", *shape).standard_normal(shape)
        res = svd(a, method)
        assert frobenius_norm(res.reconstruct() - a) / frobenius_norm(a) <= 1e-9
        assert _orth_err(res.left) <= 1e-9
        assert _orth_err(res.right) <= 1e-9
        assert np.all(np.diff(res.singular_values) <= 1e-12)


def test_methods_agree_on_singular_values_and_leading_vectors():
    a = stream(3, "test/agree").standard_normal((8, 32))
    lap, jac = svd(a, "lapack"), svd(a, "jacobi")
    np.testing.assert_allclose(lap.singular_values, jac.singular_values, rtol=1e-12)
    # leading vectors agree up to sign
    dots = np.abs(np.sum(lap.right[:, :8] * jac.right[:, :8], axis=0))
    np.testing.assert_allclose(dots, 1.0, atol=1e-10)


def test_null_space_completion_is_deterministic_and_seeded():
    a = stream(1, "test/null").standard_normal((3, 10))
    first, again = right_singular_basis(a, basis_seed=5), right_singular_basis(a, basis_seed=5)
    assert np.array_equal(first, again)
    other = right_singular_basis(a, basis_seed=6)
    # the row-space part is the same, the completion differs
    np.testing.assert_allclose(np.abs(first[:, :3]), np.abs(other[:, :3]), atol=1e-12)
    assert not np.allclose(first[:, 3:], other[:, 3:])


def test_rank_deficient_matrix_keeps_zero_singular_values():
    a = stream(2, "test/rank").standard_normal((4, 6))
    a[3] = a[0] + a[1]
    res = svd(a)
    assert res.singular_values[-1] == 0.0
    assert _orth_err(res.right) <= 1e-12
    # the completed null-space vectors really are in the null space
    assert np.abs(a @ res.right[:, 3:]).max() <= 1e-12


def test_leading_vectors_are_a_prefix_of_the_full_basis():
    a = stream(4, "test/prefix").standard_normal((8, 32))
    full = right_singular_basis(a)
    for count in (0, 5, 8, 19, 32):
        np.testing.assert_allclose(leading_right_vectors(a, count), full[:, :count], atol=1e-12)


def test_complete_basis_is_orthogonal():
    q, _ = np.linalg.qr(stream(5, "test/cb").standard_normal((12, 4)))
    full = complete_basis(q, 12, seed=3)
    assert full.shape == (12, 12)
    assert _orth_err(full) <= 1e-13
    assert np.array_equal(full[:, :4], q)


def test_jacobi_sweep_cap_raises_with_diagnostics():
    a = stream(6, "test/cap").standard_normal((30, 20))
    with pytest.raises(SvdConvergenceError, match="condition estimate"):
        _jacobi_tall(a, max_sweeps=1)


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        svd(np.eye(2), "qr")


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        as_matrix(np.ones(3))
    with pytest.raises(ValueError):
        as_matrix(np.array([[1.0, np.nan]]))


def test_frobenius_examples():
    assert frobenius_norm(np.zeros((3, 4))) == 0.0
    assert frobenius_norm(np.eye(4)) == 2.0
    a = stream(0, "test/fro").standard_normal((3, 3))
    total = 0.0
    for row in a:
        for v in row:
            total += v * v
    assert frobenius_norm(a) == pytest.approx(total**0.5, rel=1e-15)


def test_spectral_examples():
    assert spectral_norm(np.eye(5)) == pytest.approx(1.0, rel=1e-8)
    assert spectral_norm(np.diag([3.0, 2.0, 1.0])) == pytest.approx(3.0, rel=1e-8)
    assert spectral_norm(np.zeros((2, 3))) == 0.0


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_spectral_at_most_frobenius(a):
    assert spectral_norm(a) <= frobenius_norm(a) * (1 + 1e-8) + 1e-12


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_spectral_matches_largest_singular_value(a):
    s = np.linalg.svd(a, compute_uv=False)[0]
    assert spectral_norm(a) == pytest.approx(s, rel=1e-6, abs=1e-12)


def test_streams_are_keyed_not_forked():
    a = stream(1, "local", 3, 7).standard_normal(4)
    stream(1, "local", 0, 0).standard_normal(1000)  # unrelated draws in between
    b = stream(1, "local", 3, 7).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stream(1, "local", 7, 3).standard_normal(4))
    assert not np.array_equal(a, stream(2, "local", 3, 7).standard_normal(4))
    assert not np.array_equal(a, stream(1, "other", 3, 7).standard_normal(4))
