"""Finite-width layers against the kernel-space predictions."""

import math

import numpy as np
import pytest

from spattn import finite_width, kernels, linalg, schedules, validation
from spattn.errors import DimensionMismatch, ExactnessViolated


def test_build_layer_zeroes_queries_and_orthogonalizes_values():
    rng = linalg.rng_stream(0)
    op = kernels.espa_attention_analytic(16, 0.4, 0.1)
    for mode in ("orthogonal", "gaussian"):
        params = finite_width.build_attention_layer(op, 32, 4, mode, rng)
        assert np.all(params.w_query == 0.0)
        assert params.w_value.shape == (4, 32, 8)
    params = finite_width.build_attention_layer(op, 32, 4, "orthogonal", rng)
    value_cat = np.concatenate(list(params.w_value), axis=1)
    assert np.max(np.abs(value_cat.T @ value_cat - np.eye(32))) <= 1e-10
    assert np.max(np.abs(params.w_out.T @ params.w_out - np.eye(32))) <= 1e-10


def test_build_layer_rejects_indivisible_width():
    op = kernels.espa_attention_analytic(8, 0.4, 0.1)
    with pytest.raises(DimensionMismatch):
        finite_width.build_attention_layer(op, 30, 4, "orthogonal", linalg.rng_stream(0))


def test_realized_attention_matches_operator_per_head():
    rng = linalg.rng_stream(1)
    T, d, h = 24, 64, 4
    params = finite_width.build_espa_layer(T, d, h, 0.3, 0.1, "orthogonal", rng)
    x, _ = finite_width.sample_embeddings(T, d, 0.0, rng)
    attn = finite_width.realized_attention(params, x)
    for n in range(h):
        assert np.max(np.abs(attn[n] - params.operator.matrix)) <= 1e-12
    # heads are indistinguishable at initialization
    for n in range(1, h):
        assert np.array_equal(attn[n], attn[0])


def test_realized_attention_rows_sum_to_rescale():
    rng = linalg.rng_stream(2)
    T, d, h = 20, 40, 2
    params = finite_width.build_espa_layer(T, d, h, 0.5, 0.2, "gaussian", rng)
    x, _ = finite_width.sample_embeddings(T, d, 0.1, rng)
    attn = finite_width.realized_attention(params, x)
    for n in range(h):
        assert np.max(np.abs(attn[n].sum(axis=1) - params.operator.rescale)) <= 1e-12


def test_forward_reduces_to_operator_product():
    rng = linalg.rng_stream(3)
    T, d, h = 16, 32, 4
    params = finite_width.build_espa_layer(T, d, h, 0.4, 0.15, "orthogonal", rng)
    x, _ = finite_width.sample_embeddings(T, d, 0.0, rng)
    out = finite_width.forward_attention(params, x)
    value_cat = np.concatenate(list(params.w_value), axis=1)
    direct = params.operator.matrix @ x @ value_cat @ params.w_out
    assert np.max(np.abs(out - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_forward_identity_operator_preserves_row_norms():
    rng = linalg.rng_stream(4)
    T, d, h = 12, 48, 4
    params = finite_width.build_espa_layer(T, d, h, 0.2, 0.2, "orthogonal", rng)
    x, _ = finite_width.sample_embeddings(T, d, 0.0, rng)
    out = finite_width.forward_attention(params, x)
    assert np.max(np.abs(np.linalg.norm(out, axis=1) - np.linalg.norm(x, axis=1))) <= 1e-8


def test_stacked_forward_equals_accumulated_product():
    rng = linalg.rng_stream(5)
    T, d, h, L = 16, 32, 4, 8
    schedule = schedules.espa_schedule(L, 0.02)
    x0 = finite_width.orthonormal_row_inputs(T, d, rng)
    x = x0
    operator_product = np.eye(T)
    weight_product = np.eye(d)
    for l in range(1, L + 1):
        params = finite_width.build_espa_layer(
            T, d, h, schedule.gammas[l - 1], schedule.gammas[l], "orthogonal", rng
        )
        x = finite_width.forward_attention(params, x)
        value_cat = np.concatenate(list(params.w_value), axis=1)
        operator_product = params.operator.matrix @ operator_product
        weight_product = weight_product @ value_cat @ params.w_out
    direct = operator_product @ x0 @ weight_product
    assert np.max(np.abs(x - direct)) <= 1e-9


def test_small_qk_deviation_grows_with_scale():
    T, d, h = 16, 64, 4
    devs = []
    for scale in (0.05, 0.5, 1.0):
        rng = linalg.rng_stream(6)
        params = finite_width.build_espa_layer(T, d, h, 0.2, 0.1, "small_qk", rng, qk_scale=scale)
        assert np.any(params.w_query != 0.0)
        x, _ = finite_width.sample_embeddings(T, d, 0.0, rng)
        attn = finite_width.realized_attention(params, x)
        devs.append(float(np.max(np.abs(attn[0] - params.operator.matrix))))
    assert devs[0] < devs[1] < devs[2]
    assert devs[0] < 1e-2


def test_sample_embeddings_repeated_rows_identical():
    rng = linalg.rng_stream(7)
    x, sigma0 = finite_width.sample_embeddings(100, 16, 0.3, rng)
    pairs = np.argwhere(np.triu(sigma0, 1) == 1.0)
    assert len(pairs) > 0
    for i, j in pairs:
        assert np.array_equal(x[i], x[j])
    emp = finite_width.empirical_kernel(x)
    for i, j in pairs:
        # same rows, so equal up to summation-order noise in the matmul
        assert abs(emp[i, j] - emp[i, i]) <= 1e-12


def test_sample_embeddings_concentrates_at_large_width():
    devs = []
    for seed in range(10):
        rng = linalg.rng_stream(seed)
        x, sigma0 = finite_width.sample_embeddings(32, 4096, 0.02, rng)
        devs.append(float(np.max(np.abs(finite_width.empirical_kernel(x) - sigma0))))
    assert np.mean(devs) <= 5.0 / math.sqrt(4096)


def test_empirical_kernel_basics():
    T = 6
    x = math.sqrt(T) * np.eye(T)
    assert np.allclose(finite_width.empirical_kernel(x), np.eye(T), atol=1e-15)
    rng = linalg.rng_stream(8)
    x = rng.standard_normal((4, 32))
    x[2] = x[0]
    emp = finite_width.empirical_kernel(x)
    assert emp[0, 2] == emp[0, 0]


def test_orthonormal_row_inputs_give_identity_kernel():
    rng = linalg.rng_stream(9)
    x = finite_width.orthonormal_row_inputs(24, 96, rng)
    assert np.max(np.abs(finite_width.empirical_kernel(x) - np.eye(24))) <= 1e-12
    with pytest.raises(DimensionMismatch):
        finite_width.orthonormal_row_inputs(10, 4, rng)


@pytest.mark.parametrize("T,d,h,L", [(32, 64, 4, 8), (64, 64, 8, 4), (16, 128, 2, 6)])
def test_validate_exactness_orthogonal(T, d, h, L):
    report = finite_width.validate_exactness(T, d, h, L, 0.005, linalg.rng_stream(0))
    assert report.passed
    assert report.max_deviation <= 1e-6
    assert len(report.block_deviations) == L


def test_validate_exactness_single_layer_base_case():
    report = finite_width.validate_exactness(
        16, 64, 4, 1, 0.3, linalg.rng_stream(1), tolerance=1e-8
    )
    assert report.max_deviation <= 1e-8


def test_validate_exactness_raises_on_violation():
    with pytest.raises(ExactnessViolated) as info:
        finite_width.validate_exactness(
            32, 64, 4, 8, 0.005, linalg.rng_stream(2), init_mode="gaussian", tolerance=1e-6
        )
    assert 1 <= info.value.block <= 8
    assert info.value.deviation > 1e-6


def test_gaussian_deviation_decays_like_inverse_root_width():
    # Quadrupling the width should halve the deviation; allow a bracket since
    # the fixed-seed ratio fluctuates around 1/2.
    small = validation.gaussian_stack_stats(d=1024)
    large = validation.gaussian_stack_stats(d=4096)
    ratio = np.mean(large.per_seed_max_deviations) / np.mean(small.per_seed_max_deviations)
    assert 0.35 <= ratio <= 0.65


def test_finite_width_corrected_repeated_token_run():
    # Orthogonal weights with the diagonal correction keep the per-sequence
    # mean diagonal of the final empirical kernel near one.
    T, d, h, L, r, gamma_L = 100, 512, 4, 36, 0.05, 0.02
    schedule = schedules.espa_schedule(L, gamma_L)
    corr = schedules.repeated_token_corrections(schedule, T, r)
    for seed in range(3):
        rng = linalg.rng_stream(seed)
        x, _ = finite_width.sample_embeddings(T, d, r, rng)
        for l in range(1, L + 1):
            operator = schedules.corrected_attention(l, schedule, corr, T)
            params = finite_width.build_attention_layer(operator, d, h, "orthogonal", rng)
            x = finite_width.forward_attention(params, x)
        mean_diag = float(np.diag(finite_width.empirical_kernel(x)).mean())
        assert 0.8 <= mean_diag <= 1.2


def test_value_skipinit_init_is_identity_mixing():
    rng = linalg.rng_stream(10)
    T, d, h = 20, 40, 4
    params = finite_width.build_value_skipinit_layer(d, h, "orthogonal", rng)
    assert params.alpha == 1.0 and params.beta == 0.0
    x, _ = finite_width.sample_embeddings(T, d, 0.1, rng)
    out = finite_width.value_skipinit_forward(params, x)
    value_cat = np.concatenate(list(params.w_value), axis=1)
    assert np.max(np.abs(out - x @ value_cat @ params.w_out)) <= 1e-10


def test_value_skipinit_orthogonal_preserves_kernel():
    rng = linalg.rng_stream(11)
    T, d, h = 32, 128, 4
    params = finite_width.build_value_skipinit_layer(d, h, "orthogonal", rng)
    x, _ = finite_width.sample_embeddings(T, d, 0.02, rng)
    out = finite_width.value_skipinit_forward(params, x)
    dev = np.max(np.abs(finite_width.empirical_kernel(out) - finite_width.empirical_kernel(x)))
    assert dev <= 1e-8


def test_value_skipinit_full_residual_is_standard_attention():
    rng = linalg.rng_stream(12)
    T, d, h = 16, 32, 2
    params = finite_width.build_value_skipinit_layer(d, h, "gaussian", rng)
    gated = finite_width.ValueSkipInitParams(
        alpha=0.0,
        beta=1.0,
        w_query=params.w_query,
        w_key=params.w_key,
        w_value=params.w_value,
        w_out=params.w_out,
    )
    x, _ = finite_width.sample_embeddings(T, d, 0.0, rng)
    out = finite_width.value_skipinit_forward(gated, x)
    # direct standard masked attention
    mask = kernels.causal_mask(T)
    heads = []
    for n in range(h):
        logits = (x @ params.w_query[n]) @ (x @ params.w_key[n]).T / math.sqrt(d // h)
        attn = linalg.masked_row_softmax(logits, mask)
        heads.append(attn @ (x @ params.w_value[n]))
    direct = np.concatenate(heads, axis=1) @ params.w_out
    assert np.max(np.abs(out - direct)) <= 1e-12
