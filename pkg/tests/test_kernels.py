"""Kernel families, closed-form factors and attention operators."""

import math

import numpy as np
import pytest

from spattn import kernels, linalg
from spattn.errors import GammaOutOfRange, OrderViolation, RhoOutOfRange, ZeroRowSum


def test_uniform_kernel_values():
    assert np.array_equal(kernels.uniform_kernel(3, 0.0), np.eye(3))
    assert np.allclose(kernels.uniform_kernel(2, 0.8), [[1.0, 0.8], [0.8, 1.0]], atol=1e-16)


def test_uniform_kernel_ones_eigenvector():
    T, rho = 13, 0.35
    sigma = kernels.uniform_kernel(T, rho)
    ones = np.ones(T)
    assert np.allclose(sigma @ ones, (1 + (T - 1) * rho) * ones, atol=1e-12)


def test_uniform_kernel_rejects_bad_rho():
    with pytest.raises(RhoOutOfRange):
        kernels.uniform_kernel(4, 1.0)
    with pytest.raises(RhoOutOfRange):
        kernels.uniform_kernel(4, -0.1)


def test_exp_kernel_values():
    assert np.array_equal(kernels.exp_kernel(4, math.inf), np.eye(4))
    sigma = kernels.exp_kernel(2, 0.005)
    assert abs(sigma[0, 1] - math.exp(-0.005)) <= 1e-16
    sigma = kernels.exp_kernel(3, math.log(2))
    assert np.allclose(sigma, [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]], atol=1e-15)


def test_exp_kernel_rejects_bad_gamma():
    with pytest.raises(GammaOutOfRange):
        kernels.exp_kernel(4, 0.0)
    with pytest.raises(GammaOutOfRange):
        kernels.exp_kernel(4, -1.0)


def test_exp_cholesky_infinite_rate_is_identity():
    assert np.array_equal(kernels.exp_cholesky_analytic(5, math.inf), np.eye(5))


def test_exp_cholesky_reconstructs_kernel():
    for T, gamma in ((2, 0.005), (16, 0.2), (64, 2.0)):
        factor = kernels.exp_cholesky_analytic(T, gamma)
        assert np.max(np.abs(factor @ factor.T - kernels.exp_kernel(T, gamma))) <= 1e-12


def test_exp_cholesky_matches_numeric():
    for T in (8, 64, 128):
        for gamma in (0.005, 0.2, 2.0):
            analytic = kernels.exp_cholesky_analytic(T, gamma)
            numeric = linalg.cholesky(kernels.exp_kernel(T, gamma))
            assert np.max(np.abs(analytic - numeric)) <= 1e-10


def test_espa_equal_rates_is_identity_operator():
    op = kernels.espa_attention_analytic(6, 0.3, 0.3)
    assert np.array_equal(op.matrix, np.eye(6))
    assert np.array_equal(op.rescale, np.ones(6))
    off = op.bias[np.tril(np.ones((6, 6)), -1) == 1]
    assert np.all(off == -op.neg_bias_const)
    assert np.all(np.diag(op.bias) == 0.0)


def test_espa_infinite_input_rate_gives_cholesky_factor():
    op = kernels.espa_attention_analytic(16, math.inf, 0.3)
    assert np.max(np.abs(op.matrix - kernels.exp_cholesky_analytic(16, 0.3))) <= 1e-14


def test_espa_matches_triangular_solve():
    a = kernels.espa_attention_matrix(8, 0.2, 0.1)
    solved = linalg.solve_lower_triangular_right(
        kernels.exp_cholesky_analytic(8, 0.1), kernels.exp_cholesky_analytic(8, 0.2)
    )
    assert np.max(np.abs(a - solved)) <= 1e-10
    assert a.min() >= -1e-12


def test_espa_matches_solve_randomized_up_to_128():
    rng = linalg.rng_stream(21)
    for _ in range(40):
        T = int(rng.integers(2, 129))
        g_out = float(rng.uniform(0.002, 1.5))
        g_in = float(rng.uniform(g_out, 2.5))
        a = kernels.espa_attention_matrix(T, g_in, g_out)
        solved = linalg.solve_lower_triangular_right(
            kernels.exp_cholesky_analytic(T, g_out), kernels.exp_cholesky_analytic(T, g_in)
        )
        assert np.max(np.abs(a - solved)) <= 1e-10


def test_espa_diagonal_identity():
    T, g_in, g_out = 10, 0.7, 0.2
    a = kernels.espa_attention_matrix(T, g_in, g_out)
    ratio = kernels.decay_helper_a(g_out) / kernels.decay_helper_a(g_in)
    assert np.allclose(np.diag(a)[1:], ratio, atol=1e-15)
    assert a[0, 0] == 1.0


def test_espa_rejects_increasing_rates():
    with pytest.raises(OrderViolation):
        kernels.espa_attention_analytic(8, 0.1, 0.2)


def test_espa_telescoping_chain():
    # Rates inf >= g_1 >= ... >= g_L: the operator product collapses to the
    # terminal Cholesky factor.
    T = 32
    rates = [math.inf, 1.0, 0.5, 0.21, 0.08, 0.005]
    product = np.eye(T)
    for g_in, g_out in zip(rates[:-1], rates[1:]):
        product = kernels.espa_attention_matrix(T, g_in, g_out) @ product
    assert np.max(np.abs(product - kernels.exp_cholesky_analytic(T, 0.005))) <= 1e-9


def test_uspa_equal_rhos_is_identity():
    op = kernels.uspa_attention(5, 0.3, 0.3)
    assert np.array_equal(op.matrix, np.eye(5))


def test_uspa_forced_2x2():
    op = kernels.uspa_attention(2, 0.0, 0.8)
    assert np.allclose(op.matrix, [[1.0, 0.0], [0.8, 0.6]], atol=1e-12)


def test_uspa_nonnegative_at_64():
    a = kernels.uspa_attention_matrix(64, 0.2, 0.5)
    assert a.min() >= -1e-12


def test_uspa_rejects_bad_parameters():
    with pytest.raises(OrderViolation):
        kernels.uspa_attention(4, 0.5, 0.2)
    with pytest.raises(RhoOutOfRange):
        kernels.uspa_attention(4, 0.2, 1.0)


def test_noncausal_identity_when_equal():
    assert np.array_equal(kernels.noncausal_spa_attention(6, "uniform", 0.4, 0.4), np.eye(6))
    assert np.array_equal(kernels.noncausal_spa_attention(6, "exponential", 0.4, 0.4), np.eye(6))


def test_noncausal_uniform_family_closure():
    # The symmetric-root operator for the uniform family stays in the
    # span of identity plus all-ones.
    T = 12
    a = kernels.noncausal_spa_attention(T, "uniform", 0.1, 0.6)
    d = a[0, 1]
    c = a[0, 0] - d
    fit = c * np.eye(T) + d * np.ones((T, T))
    assert np.max(np.abs(a - fit)) <= 1e-10
    assert a.min() >= -1e-12


def test_noncausal_exponential_empirically_nonnegative():
    a = kernels.noncausal_spa_attention(32, "exponential", 0.2, 0.05)
    assert a.min() >= -1e-9


def test_noncausal_rejects_order_violation():
    with pytest.raises(OrderViolation):
        kernels.noncausal_spa_attention(8, "uniform", 0.6, 0.1)
    with pytest.raises(OrderViolation):
        kernels.noncausal_spa_attention(8, "exponential", 0.05, 0.2)


def test_decompose_identity():
    op = kernels.decompose_dpb(np.eye(4))
    assert np.array_equal(op.rescale, np.ones(4))
    assert np.array_equal(op.stochastic, np.eye(4))
    assert np.all(np.diag(op.bias) == 0.0)
    assert np.all(op.bias[np.tril(np.ones((4, 4)), -1) == 1] == -kernels.DEFAULT_NEG_BIAS)


def test_decompose_forced_arithmetic():
    op = kernels.decompose_dpb(np.array([[1.0, 0.0], [0.8, 0.6]]))
    assert np.allclose(op.rescale, [1.0, 1.4], atol=1e-15)
    assert np.allclose(op.stochastic[1], [4.0 / 7.0, 3.0 / 7.0], atol=1e-15)


def test_decompose_reconstruction_and_softmax_roundtrip():
    a = kernels.espa_attention_matrix(24, 0.5, 0.08)
    op = kernels.decompose_dpb(a)
    assert np.max(np.abs(op.rescale[:, None] * op.stochastic - op.matrix)) <= 1e-12
    probs = linalg.masked_row_softmax(op.bias, op.mask, op.neg_bias_const)
    assert np.max(np.abs(probs - op.stochastic)) <= 1e-12


def test_decompose_clamps_float_noise_but_rejects_real_negatives():
    a = np.array([[1.0, 0.0], [-5e-13, 0.5]])
    op = kernels.decompose_dpb(a)
    assert op.matrix[1, 0] == 0.0
    with pytest.raises(ValueError):
        kernels.decompose_dpb(np.array([[1.0, 0.0], [-1e-6, 0.5]]))


def test_decompose_rejects_zero_row():
    with pytest.raises(ZeroRowSum):
        kernels.decompose_dpb(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_decay_helper_values():
    assert kernels.decay_helper_a(math.inf) == 1.0
    assert abs(kernels.decay_helper_a(math.log(2) / 2) - math.sqrt(0.5)) <= 1e-15


def test_decay_helper_inverse_roundtrip():
    rng = linalg.rng_stream(13)
    for _ in range(200):
        gamma = float(rng.uniform(1e-3, 5.0))
        back = kernels.gamma_for_a(kernels.decay_helper_a(gamma))
        assert abs(back - gamma) <= 1e-12 * max(1.0, gamma)


def test_stochastic_row_norm_attenuation():
    # Rows of P with several live entries have two-norm strictly below one.
    for a in (
        kernels.espa_attention_matrix(20, 0.4, 0.1),
        kernels.uspa_attention_matrix(20, 0.1, 0.6),
    ):
        op = kernels.decompose_dpb(a)
        for i in range(1, 20):
            row = op.stochastic[i]
            if (row > 0).sum() > 1:
                assert np.linalg.norm(row) < 1.0
