"""Tests for the dense matrix kernels and the involutory diagonalization."""

import numpy as np
import pytest

from involute.linalg import (
    IdentityExcludedError,
    NotInvolutoryError,
    SingularMatrixError,
    check_involutory,
    diagonalize_involutory,
    format_matrix_text,
    lu_inverse,
    matmul,
    parse_matrix_text,
    random_involutory,
)


def naive_matmul(a, b):
    """Independent triple-loop oracle."""
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_reflection_squared_is_identity(self):
        r = np.array([[1.0, 0.0], [0.0, -1.0]])
        np.testing.assert_allclose(matmul(r, r), np.eye(2), atol=0)

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3))
        np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-13)

    def test_shape_mismatch_reports_shapes(self):
        with pytest.raises(ValueError, match="2x3 @ 2x2"):
            matmul(np.ones((2, 3)), np.ones((2, 2)))


class TestLuInverse:
    def test_identity(self):
        np.testing.assert_allclose(lu_inverse(np.eye(3)), np.eye(3), atol=0)

    def test_diagonal(self):
        np.testing.assert_allclose(lu_inverse(np.diag([2.0, 4.0])),
                                   np.diag([0.5, 0.25]), atol=1e-15)

    def test_multiply_back_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(4, 4)) + 4.0 * np.eye(4)
        inv = lu_inverse(a)
        np.testing.assert_allclose(a @ inv, np.eye(4), atol=1e-8)

    def test_singular_names_pivot(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrixError, match="pivot 1"):
            lu_inverse(a)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            lu_inverse(np.ones((2, 3)))


class TestCheckInvolutory:
    def test_xy_plane_reflection(self):
        assert check_involutory(np.diag([1.0, 1.0, -1.0]))

    def test_inversion_2d(self):
        assert check_involutory(-np.eye(2))

    def test_shear_is_not(self):
        assert not check_involutory(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            check_involutory(np.ones((2, 3)))


class TestDiagonalize:
    def test_negative_identity(self):
        d = diagonalize_involutory(-np.eye(2))
        assert d.gamma == 2
        np.testing.assert_allclose(d.Pinv @ (-np.eye(2)) @ d.P, -np.eye(2), atol=1e-12)

    def test_xy_reflection(self):
        a = np.diag([1.0, 1.0, -1.0])
        d = diagonalize_involutory(a)
        assert d.gamma == 1
        np.testing.assert_allclose(d.Pinv @ a @ d.P, np.diag(d.d_diagonal()), atol=1e-10)

    def test_householder_reconstruction(self):
        rng = np.random.default_rng(42)
        u = rng.normal(size=4)
        a = np.eye(4) - 2.0 * np.outer(u, u) / (u @ u)
        d = diagonalize_involutory(a)
        assert d.gamma == 1
        recon = d.P @ np.diag(d.d_diagonal()) @ d.Pinv
        np.testing.assert_allclose(recon, a, atol=1e-10)

    def test_identity_excluded(self):
        with pytest.raises(IdentityExcludedError):
            diagonalize_involutory(np.eye(3))

    def test_not_involutory(self):
        with pytest.raises(NotInvolutoryError):
            diagonalize_involutory(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_non_symmetric_involutory(self):
        a = np.array([[1.0, 1.0], [0.0, -1.0]])  # involutory but not normal
        d = diagonalize_involutory(a)
        assert d.gamma == 1
        recon = d.P @ np.diag(d.d_diagonal()) @ d.Pinv
        np.testing.assert_allclose(recon, a, atol=1e-10)

    def test_invariants_hold(self):
        a = random_involutory(5, 2, seed=3)
        d = diagonalize_involutory(a)
        assert 1 <= d.gamma <= d.n
        np.testing.assert_allclose(d.P @ d.Pinv, np.eye(5), atol=1e-8)
        assert d.gamma == round((5 - np.trace(a)) / 2)


class TestRandomInvolutory:
    def test_one_dimensional(self):
        np.testing.assert_array_equal(random_involutory(1, 1, seed=0), [[-1.0]])

    def test_trace_identity(self):
        a = random_involutory(3, 1, seed=7)
        assert abs(np.trace(a) - 1.0) < 1e-8

    def test_all_negative_eigenvalues(self):
        np.testing.assert_array_equal(random_involutory(5, 5, seed=9), -np.eye(5))

    def test_gamma_out_of_range(self):
        with pytest.raises(ValueError):
            random_involutory(3, 0, seed=0)
        with pytest.raises(ValueError):
            random_involutory(3, 4, seed=0)


class TestFuzzProperties:
    def test_involution_and_trace_all_shapes(self):
        for n in range(1, 7):
            for gamma in range(1, n + 1):
                a = random_involutory(n, gamma, seed=100 * n + gamma)
                assert np.max(np.abs(a @ a - np.eye(n))) <= 1e-8
                assert round((n - np.trace(a)) / 2) == gamma

    def test_reconstruction_100_cases(self):
        rng = np.random.default_rng(2024)
        for case in range(100):
            n = int(rng.integers(1, 7))
            gamma = int(rng.integers(1, n + 1))
            a = random_involutory(n, gamma, seed=case)
            d = diagonalize_involutory(a)
            recon = d.P @ np.diag(d.d_diagonal()) @ d.Pinv
            assert np.max(np.abs(recon - a)) <= 1e-7

    def test_closure_sanity(self):
        a = random_involutory(4, 2, seed=77)
        d = diagonalize_involutory(a)
        prod = matmul(d.P, d.Pinv)
        np.testing.assert_allclose(lu_inverse(prod), np.eye(4), atol=1e-8)


class TestTextFormat:
    def test_round_trip(self):
        a = np.array([[1.5, -2.25], [1.0 / 3.0, 7.0]])
        b = parse_matrix_text(format_matrix_text(a))
        np.testing.assert_array_equal(a, b)

    def test_header(self):
        text = format_matrix_text(np.ones((2, 3)))
        assert text.splitlines()[0] == "2 3"

    def test_malformed(self):
        with pytest.raises(ValueError):
            parse_matrix_text("2 2\n1 2\n")
