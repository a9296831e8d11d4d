"""Tests for the sign partition, reparameterization, and invariance wrappers."""

import numpy as np
import pytest

from involute.linalg import NotInvolutoryError, random_involutory
from involute.nn import finite_diff_grad
from involute.symmetry import (
    IncompatibleOffsetError,
    PartitionLabel,
    affine_to_linear,
    block_spec,
    classify,
    classify_batch,
    involutory_spec,
    reparam_batch,
    reparam_dataset,
    reparam_multi,
    reparam_multi_batch,
    reparam_point,
    spec_from_json,
    spec_to_json,
    vector_in_pid,
    wrap_inference,
    wrap_input_gradient,
)

NEG1 = [[-1.0]]


def householder(u):
    u = np.asarray(u, dtype=float)
    return np.eye(u.size) - 2.0 * np.outer(u, u) / (u @ u)


class TestAffineToLinear:
    def test_point_reflection_1d(self):
        a, shift = affine_to_linear(NEG1, [4.0])
        np.testing.assert_array_equal(shift, [2.0])

    def test_zero_offset(self):
        a, shift = affine_to_linear(-np.eye(2), [0.0, 0.0])
        np.testing.assert_array_equal(shift, [0.0, 0.0])

    def test_householder_substitution_oracle(self):
        a = householder([1.0, 0.0])
        mu = np.array([3.0, 0.0])
        a2, shift = affine_to_linear(a, mu)
        np.testing.assert_array_equal(shift, [1.5, 0.0])
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(size=2)
            t_x = a @ x + mu
            np.testing.assert_allclose(t_x - shift, a @ (x - shift), atol=1e-9)

    def test_incompatible_offset(self):
        with pytest.raises(IncompatibleOffsetError):
            affine_to_linear(np.diag([1.0, -1.0]), [3.0, 0.0])

    def test_not_involutory(self):
        with pytest.raises(NotInvolutoryError):
            affine_to_linear([[2.0]], [0.0])


class TestVectorInPid:
    def test_one_dimensional_sign_partition(self):
        pinv = np.eye(1)
        assert vector_in_pid([3.0], pinv, 1, 1) is True
        assert vector_in_pid([-3.0], pinv, 1, 1) is False
        assert vector_in_pid([0.0], pinv, 1, 1) is True

    def test_fixed_subspace_membership(self):
        spec = involutory_spec(np.diag([1.0, -1.0]), 1)
        assert vector_in_pid([5.0, 0.0], spec.diag.Pinv, spec.diag.gamma, 2) is True

    def test_partition_complement_oracle(self):
        a = random_involutory(4, 2, seed=13)
        spec = involutory_spec(a, 1)
        rng = np.random.default_rng(4)
        for _ in range(1000):
            v = rng.normal(size=4)
            if classify(v, spec) is PartitionLabel.S0:
                continue
            lhs = vector_in_pid(v, spec.diag.Pinv, spec.diag.gamma, 4)
            rhs = vector_in_pid(a @ v, spec.diag.Pinv, spec.diag.gamma, 4)
            assert lhs != rhs


class TestClassify:
    def test_fixed_subspace(self):
        a = np.diag([1.0, -1.0])
        spec = involutory_spec(a, 1)
        v = np.array([2.5, 0.0])
        assert classify(v, spec) is PartitionLabel.S0
        assert np.max(np.abs(a @ v - v)) <= 1e-8

    def test_last_dimension_sign_rule(self):
        spec = involutory_spec(-np.eye(2), 1)
        assert classify([0.0, 1.0], spec) is PartitionLabel.SPLUS
        assert classify([0.0, -1.0], spec) is PartitionLabel.SMINUS

    def test_recursion_to_first_dimension(self):
        spec = involutory_spec(-np.eye(2), 1)
        assert classify([-1.0, 0.0], spec) is PartitionLabel.SMINUS

    def test_trichotomy_and_swap_fuzz(self):
        rng = np.random.default_rng(99)
        for case in range(50):
            n = int(rng.integers(1, 6))
            gamma = int(rng.integers(1, n + 1))
            a = random_involutory(n, gamma, seed=case + 1000)
            spec = involutory_spec(a, 1)
            for _ in range(40):
                v = rng.normal(size=n)
                lab = classify(v, spec)
                swapped = classify(a @ v, spec)
                if lab is PartitionLabel.S0:
                    assert swapped is PartitionLabel.S0
                else:
                    assert {lab, swapped} == {PartitionLabel.SPLUS, PartitionLabel.SMINUS}


class TestReparamPoint:
    def test_even_1d(self):
        spec = involutory_spec(NEG1, 1)
        x2, sign = reparam_point([-0.7], spec)
        np.testing.assert_array_equal(x2, [0.7])
        assert sign == 1

    def test_odd_1d(self):
        spec = involutory_spec(NEG1, -1)
        x2, sign = reparam_point([-0.7], spec)
        np.testing.assert_array_equal(x2, [0.7])
        assert sign == -1

    def test_pid_untouched(self):
        spec = involutory_spec(NEG1, 1)
        for v in ([0.7], [0.0]):
            x2, sign = reparam_point(v, spec)
            np.testing.assert_array_equal(x2, v)
            assert sign == 1

    def test_idempotent_and_closed(self):
        rng = np.random.default_rng(8)
        a = random_involutory(3, 2, seed=21)
        spec = involutory_spec(a, -1)
        for _ in range(200):
            v = rng.normal(size=3)
            x1, s1 = reparam_point(v, spec)
            x2, s2 = reparam_point(x1, spec)
            np.testing.assert_array_equal(x1, x2)
            assert s2 == 1
            assert classify(x1, spec) in (PartitionLabel.S0, PartitionLabel.SPLUS)


class TestReparamDataset:
    def test_even_and_odd_1d(self):
        even = involutory_spec(NEG1, 1)
        xs, ys = reparam_dataset([[-0.5]], [0.88], even)
        np.testing.assert_array_equal(xs, [[0.5]])
        np.testing.assert_array_equal(ys, [0.88])
        odd = involutory_spec(NEG1, -1)
        xs, ys = reparam_dataset([[-0.5]], [-0.48], odd)
        np.testing.assert_array_equal(xs, [[0.5]])
        np.testing.assert_array_equal(ys, [0.48])

    def test_no_sminus_left(self):
        a = random_involutory(3, 1, seed=5)
        spec = involutory_spec(a, 1)
        rng = np.random.default_rng(15)
        xs = rng.normal(size=(100, 3))
        out_x, _ = reparam_dataset(xs, np.zeros(100), spec)
        for row in out_x:
            assert classify(row, spec) is not PartitionLabel.SMINUS

    def test_length_mismatch(self):
        spec = involutory_spec(NEG1, 1)
        with pytest.raises(ValueError):
            reparam_dataset([[1.0]], [1.0, 2.0], spec)


class TestReparamMulti:
    def test_paper_example_blocks(self):
        # f(x,y,z) = z^2 (x+y): inversion over (x,y) odd, sign flip on z even
        bspec = block_spec([
            ((0, 1), involutory_spec(-np.eye(2), -1)),
            ((2,), involutory_spec(NEG1, 1)),
        ])
        x2, sign = reparam_multi([-1.0, -2.0, -3.0], bspec)
        np.testing.assert_array_equal(x2, [1.0, 2.0, 3.0])
        assert sign == -1

    def test_already_in_pid(self):
        bspec = block_spec([
            ((0,), involutory_spec(NEG1, -1)),
            ((1,), involutory_spec(NEG1, 1)),
        ])
        x2, sign = reparam_multi([0.5, 0.25], bspec)
        np.testing.assert_array_equal(x2, [0.5, 0.25])
        assert sign == 1

    def test_disjointness_enforced(self):
        spec = involutory_spec(NEG1, 1)
        with pytest.raises(ValueError):
            block_spec([((0,), spec), ((0,), spec)])

    def test_definition_unfolding_oracle(self):
        bspec = block_spec([
            ((0,), involutory_spec(NEG1, -1)),
            ((1,), involutory_spec(NEG1, 1)),
            ((2,), involutory_spec(NEG1, -1)),
        ])

        def model(v):
            return float(np.sin(v[0]) + np.cos(v[1]) + v[2] ** 3)

        g = wrap_inference(model, bspec)
        rng = np.random.default_rng(123)
        for _ in range(500):
            x = rng.normal(size=3)
            x2, sign = reparam_multi(x, bspec)
            assert g(x) == sign * model(x2)


class TestWrapInference:
    def test_even_bitwise(self):
        a = -np.eye(3)
        spec = involutory_spec(a, 1)

        def model(v):
            return float(np.tanh(v @ [0.3, -0.7, 1.1]) + 0.2 * v[0] ** 2)

        g = wrap_inference(model, spec)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            x = rng.normal(size=3)
            assert g(-x) == g(x)

    def test_odd_bitwise(self):
        spec = involutory_spec(-np.eye(2), -1)
        g = wrap_inference(lambda v: float(v[0] + v[1] ** 3), spec)
        rng = np.random.default_rng(4)
        for _ in range(200):
            x = rng.normal(size=2)
            assert g(-x) == -g(x)

    def test_general_matrix_tolerance(self):
        a = random_involutory(4, 2, seed=31)
        spec = involutory_spec(a, 1)
        g = wrap_inference(lambda v: float(np.cos(v).sum()), spec)
        rng = np.random.default_rng(6)
        for _ in range(200):
            x = rng.normal(size=4)
            assert abs(g(a @ x) - g(x)) <= 1e-10

    def test_affine_wrapped(self):
        a = np.array(NEG1)
        mu = np.array([4.0])
        spec = involutory_spec(a, 1, mu)
        g = wrap_inference(lambda v: float(np.exp(v[0])), spec)
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = rng.normal(size=1)
            tx = a @ x + mu
            assert abs(g(tx) - g(x)) <= 1e-9


class TestWrapInputGradient:
    def test_identity_on_splus(self):
        spec = involutory_spec(-np.eye(2), 1)
        grad = lambda v: np.array([2.0 * v[0], np.cos(v[1])])
        wg = wrap_input_gradient(grad, spec)
        x = np.array([0.3, 0.8])
        np.testing.assert_array_equal(wg(x), grad(x))

    def test_chain_rule_against_finite_differences(self):
        spec = involutory_spec(-np.eye(2), 1)

        def model(v):
            return float(np.sin(v[0]) * np.cos(v[1]) + v[0] ** 2)

        def grad(v):
            return np.array([np.cos(v[0]) * np.cos(v[1]) + 2 * v[0],
                             -np.sin(v[0]) * np.sin(v[1])])

        g = wrap_inference(model, spec)
        wg = wrap_input_gradient(grad, spec)
        x = np.array([-1.0, -1.0])
        fd = finite_diff_grad(lambda v: g(v), x)
        np.testing.assert_allclose(wg(x), fd, rtol=1e-5)

    def test_quadratic_already_invariant(self):
        spec = involutory_spec(-np.eye(3), 1)
        wg = wrap_input_gradient(lambda v: 2.0 * v, spec)
        rng = np.random.default_rng(17)
        for _ in range(100):
            x = rng.normal(size=3)
            np.testing.assert_allclose(wg(x), 2.0 * x, atol=1e-15)

    def test_boundary_hits_counted(self):
        spec = involutory_spec(-np.eye(2), 1)
        wg = wrap_input_gradient(lambda v: v, spec)
        wg(np.array([1.0, 0.0]))  # skips the zero last coordinate, then decides
        assert wg.boundary_hits == 1
        wg(np.array([1.0, 1.0]))
        assert wg.boundary_hits == 1

    def test_multi_block_gradient(self):
        bspec = block_spec([
            ((0,), involutory_spec(NEG1, 1)),
            ((1,), involutory_spec(NEG1, 1)),
        ])

        def model(v):
            return float(np.cosh(v[0]) + v[1] ** 4)

        def grad(v):
            return np.array([np.sinh(v[0]), 4.0 * v[1] ** 3])

        g = wrap_inference(model, bspec)
        wg = wrap_input_gradient(grad, bspec)
        rng = np.random.default_rng(23)
        for _ in range(50):
            x = rng.normal(size=2)
            fd = finite_diff_grad(lambda v: g(v), x)
            np.testing.assert_allclose(wg(x), fd, rtol=2e-5, atol=1e-8)


class TestBatchedHelpers:
    def test_classify_batch_matches_pointwise(self):
        a = random_involutory(3, 2, seed=41)
        spec = involutory_spec(a, 1)
        rng = np.random.default_rng(10)
        xs = rng.normal(size=(300, 3))
        labels = classify_batch(xs, spec)
        lut = {PartitionLabel.SPLUS: 1, PartitionLabel.SMINUS: -1, PartitionLabel.S0: 0}
        for row, lab in zip(xs, labels):
            assert lut[classify(row, spec)] == lab

    def test_reparam_batch_matches_pointwise(self):
        spec = involutory_spec(-np.eye(2), -1)
        rng = np.random.default_rng(12)
        xs = rng.normal(size=(200, 2))
        bx, bs = reparam_batch(xs, spec)
        for i in range(200):
            px, ps = reparam_point(xs[i], spec)
            np.testing.assert_array_equal(bx[i], px)
            assert bs[i] == ps

    def test_reparam_multi_batch_matches_pointwise(self):
        bspec = block_spec([
            ((0,), involutory_spec(NEG1, -1)),
            ((1,), involutory_spec(NEG1, 1)),
        ])
        rng = np.random.default_rng(13)
        xs = rng.normal(size=(200, 2))
        bx, bs = reparam_multi_batch(xs, bspec)
        for i in range(200):
            px, ps = reparam_multi(xs[i], bspec)
            np.testing.assert_array_equal(bx[i], px)
            assert bs[i] == ps


class TestSpecValidationAndJson:
    def test_rejects_non_involutory(self):
        with pytest.raises(NotInvolutoryError):
            involutory_spec([[1.0, 1.0], [0.0, 1.0]], 1)

    def test_rejects_bad_parity(self):
        with pytest.raises(ValueError):
            involutory_spec(NEG1, 2)

    def test_rejects_incompatible_mu(self):
        with pytest.raises(IncompatibleOffsetError):
            involutory_spec(np.diag([1.0, -1.0]), 1, mu=[1.0, 0.0])

    def test_json_round_trip(self):
        spec = involutory_spec(np.diag([1.0, -1.0]), -1, mu=[0.0, 3.0])
        doc = spec_to_json(spec)
        back = spec_from_json(doc)
        np.testing.assert_array_equal(back.A, spec.A)
        np.testing.assert_array_equal(back.mu, spec.mu)
        assert back.parity == spec.parity
