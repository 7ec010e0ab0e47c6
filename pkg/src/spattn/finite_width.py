"""Finite-width attention layers whose realized attention matrix at
initialization equals a prescribed operator, plus forward passes that validate
the kernel predictions of :mod:`spattn.propagation`.

The layer zeroes the query weights, adds the operator's bias to the logits,
scales the masked-softmax rows by the operator's rescale vector, and applies
per-head value weights followed by an output projection. With orthogonal
weights the empirical kernel X @ X.T / d then follows the infinite-width
recursion exactly, not just in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DimensionMismatch, ExactnessViolated
from .kernels import AttentionOperator, causal_mask, espa_attention_analytic, exp_kernel
from .propagation import sample_token_ids
from .schedules import espa_schedule

INIT_MODES = ("orthogonal", "gaussian", "small_qk")


@dataclass(frozen=True)
class AttentionLayerParams:
    """Weights of one modified masked-attention layer.

    Query/key/value weights are stacked per head with shape (h, d, d/h); the
    output projection is d x d. In orthogonal mode the concatenated value
    matrix and the output projection are each a single d x d orthogonal
    matrix.
    """

    operator: AttentionOperator
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_out: np.ndarray

    @property
    def heads(self) -> int:
        return self.w_value.shape[0]

    @property
    def width(self) -> int:
        return self.w_value.shape[1]

    @property
    def head_dim(self) -> int:
        return self.w_value.shape[2]


@dataclass(frozen=True)
class ValueSkipInitParams:
    """Standard softmax attention with the value path gated by
    alpha * I + beta * A(X); alpha = 1 and beta = 0 at initialization."""

    alpha: float
    beta: float
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_out: np.ndarray
    mask_const: float = linalg.DEFAULT_MASK_CONST

    @property
    def heads(self) -> int:
        return self.w_value.shape[0]

    @property
    def width(self) -> int:
        return self.w_value.shape[1]

    @property
    def head_dim(self) -> int:
        return self.w_value.shape[2]


@dataclass(frozen=True)
class ExactnessReport:
    """Max-abs deviation of the empirical kernel from the scheduled family
    member, one entry per block."""

    block_deviations: np.ndarray
    tolerance: float | None
    init_mode: str

    @property
    def max_deviation(self) -> float:
        return float(self.block_deviations.max())

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.max_deviation <= self.tolerance


def _split_heads(matrix: np.ndarray, h: int) -> np.ndarray:
    """Split a d x d matrix column-wise into h blocks of shape (d, d/h)."""
    d = matrix.shape[0]
    return np.moveaxis(matrix.reshape(d, h, d // h), 1, 0)


def build_attention_layer(
    operator: AttentionOperator,
    d: int,
    h: int,
    init_mode: str,
    rng: np.random.Generator,
    qk_scale: float | None = None,
) -> AttentionLayerParams:
    """Initialise layer weights so the realized attention equals ``operator``.

    Modes: ``orthogonal`` draws one d x d orthogonal matrix per weight group
    and zeroes the queries; ``gaussian`` uses fan-in N(0, 1/d) draws and
    zeroes the queries; ``small_qk`` keeps orthogonal value/output weights but
    initialises both query and key weights at scale ``qk_scale``, giving an
    approximately (not exactly) zero query-key term.
    """
    d = int(d)
    h = int(h)
    if h < 1 or d < 1:
        raise DimensionMismatch(f"need positive width and heads, got d={d}, h={h}")
    if d % h != 0:
        raise DimensionMismatch(f"width {d} not divisible by heads {h}")
    if init_mode not in INIT_MODES:
        raise ValueError(f"unknown init_mode {init_mode!r}; expected one of {INIT_MODES}")
    zeros = np.zeros((h, d, d // h))
    if init_mode == "orthogonal":
        w_query = zeros
        w_key = _split_heads(linalg.sample_orthogonal(d, rng), h)
        w_value = _split_heads(linalg.sample_orthogonal(d, rng), h)
        w_out = linalg.sample_orthogonal(d, rng)
    elif init_mode == "gaussian":
        w_query = zeros
        w_key = _split_heads(linalg.sample_gaussian_fan_in(d, d, rng), h)
        w_value = _split_heads(linalg.sample_gaussian_fan_in(d, d, rng), h)
        w_out = linalg.sample_gaussian_fan_in(d, d, rng)
    else:
        if qk_scale is None or not float(qk_scale) > 0.0:
            raise ValueError("small_qk mode needs a positive qk_scale")
        w_query = float(qk_scale) * _split_heads(linalg.sample_orthogonal(d, rng), h)
        w_key = float(qk_scale) * _split_heads(linalg.sample_orthogonal(d, rng), h)
        w_value = _split_heads(linalg.sample_orthogonal(d, rng), h)
        w_out = linalg.sample_orthogonal(d, rng)
    return AttentionLayerParams(
        operator=operator, w_query=w_query, w_key=w_key, w_value=w_value, w_out=w_out
    )


def build_espa_layer(
    T: int,
    d: int,
    h: int,
    gamma_in: float,
    gamma_out: float,
    init_mode: str,
    rng: np.random.Generator,
    qk_scale: float | None = None,
) -> AttentionLayerParams:
    """Layer whose target operator maps the exponential kernel at gamma_in to
    the one at gamma_out."""
    operator = espa_attention_analytic(int(T), gamma_in, gamma_out)
    return build_attention_layer(operator, d, h, init_mode, rng, qk_scale)


def realized_attention(params: AttentionLayerParams, x: np.ndarray) -> np.ndarray:
    """Per-head attention matrices diag(D) @ softmax(query-key term + bias),
    shape (h, T, T). Equals the target operator whenever the query-key term
    vanishes."""
    x = _check_width(params, x)
    op = params.operator
    scale = 1.0 / np.sqrt(params.head_dim)
    out = np.empty((params.heads, x.shape[0], x.shape[0]))
    for n in range(params.heads):
        logits = scale * (x @ params.w_query[n]) @ (x @ params.w_key[n]).T + op.bias
        probs = linalg.masked_row_softmax(logits, op.mask, op.neg_bias_const)
        out[n] = op.rescale[:, None] * probs
    return out


def forward_attention(params: AttentionLayerParams, x: np.ndarray) -> np.ndarray:
    """One layer forward pass: per-head rescaled masked softmax applied to the
    per-head values, concatenated, then the output projection."""
    x = _check_width(params, x)
    attn = realized_attention(params, x)
    head_outputs = [attn[n] @ (x @ params.w_value[n]) for n in range(params.heads)]
    return np.concatenate(head_outputs, axis=1) @ params.w_out


def _check_width(params, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.width:
        raise DimensionMismatch(f"activations shape {x.shape} incompatible with width {params.width}")
    return x


def empirical_kernel(x: np.ndarray) -> np.ndarray:
    """Location kernel X @ X.T / d of a T x d activation matrix."""
    x = np.asarray(x, dtype=float)
    return x @ x.T / x.shape[1]


def sample_embeddings(
    T: int, d: int, r: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Token embeddings with repeated-token structure.

    Ids come from the same sampler as the kernel-space input kernel; each
    distinct id gets an independent N(0, 1/d) row rescaled by sqrt(d), so
    coordinates have unit variance and the expected empirical kernel is the
    exact 0/1 id kernel, which is returned alongside.
    """
    ids = sample_token_ids(int(T), r, rng)
    distinct, inverse = np.unique(ids, return_inverse=True)
    rows = rng.standard_normal((len(distinct), int(d))) / np.sqrt(int(d))
    x = np.sqrt(int(d)) * rows[inverse]
    sigma0 = (ids[:, None] == ids[None, :]).astype(float)
    return x, sigma0


def orthonormal_row_inputs(T: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Inputs sqrt(d) * U with U the first T rows of a uniform d x d
    orthogonal matrix, so the empirical input kernel is the identity exactly.
    Drawn economy-size: orthonormalise a d x T Gaussian block."""
    T = int(T)
    d = int(d)
    if T > d:
        raise DimensionMismatch(f"need T <= d for orthonormal rows, got T={T}, d={d}")
    g = rng.standard_normal((d, T))
    q, rfac = np.linalg.qr(g)
    return np.sqrt(d) * (q * np.where(np.diag(rfac) < 0.0, -1.0, 1.0)).T


def validate_exactness(
    T: int,
    d: int,
    h: int,
    L: int,
    gamma_L: float,
    rng: np.random.Generator,
    init_mode: str = "orthogonal",
    tolerance: float | None = 1e-6,
) -> ExactnessReport:
    """Run an L-layer scheduled stack on identity-kernel inputs and compare
    each block's empirical kernel to the scheduled exponential kernel.

    With orthogonal weights the deviation is pure floating-point accumulation;
    pass ``tolerance=None`` to measure (rather than assert) the deviation, as
    in Gaussian mode where it concentrates at the 1/sqrt(d) scale.
    """
    schedule = espa_schedule(int(L), gamma_L)
    x = orthonormal_row_inputs(T, d, rng)
    deviations = np.empty(int(L))
    for l in range(1, int(L) + 1):
        layer = build_espa_layer(
            T, d, h, schedule.gammas[l - 1], schedule.gammas[l], init_mode, rng
        )
        x = forward_attention(layer, x)
        deviations[l - 1] = np.max(np.abs(empirical_kernel(x) - exp_kernel(int(T), schedule.gammas[l])))
    report = ExactnessReport(
        block_deviations=deviations, tolerance=tolerance, init_mode=init_mode
    )
    if tolerance is not None and report.max_deviation > tolerance:
        worst = int(deviations.argmax()) + 1
        raise ExactnessViolated(worst, float(deviations[worst - 1]), float(tolerance))
    return report


def build_value_skipinit_layer(
    d: int, h: int, init_mode: str, rng: np.random.Generator
) -> ValueSkipInitParams:
    """Standard masked softmax attention with gates alpha = 1, beta = 0, so
    the realized attention at initialization is the identity. Query and key
    weights follow the standard (nonzero) initialization."""
    d = int(d)
    h = int(h)
    if d % h != 0:
        raise DimensionMismatch(f"width {d} not divisible by heads {h}")
    if init_mode == "orthogonal":
        draw = linalg.sample_orthogonal
    elif init_mode == "gaussian":
        draw = lambda n, gen: linalg.sample_gaussian_fan_in(n, n, gen)
    else:
        raise ValueError(f"unknown init_mode {init_mode!r}; expected 'orthogonal' or 'gaussian'")
    w_query = _split_heads(draw(d, rng), h)
    w_key = _split_heads(draw(d, rng), h)
    w_value = _split_heads(draw(d, rng), h)
    w_out = draw(d, rng)
    return ValueSkipInitParams(
        alpha=1.0, beta=0.0, w_query=w_query, w_key=w_key, w_value=w_value, w_out=w_out
    )


def value_skipinit_forward(params: ValueSkipInitParams, x: np.ndarray) -> np.ndarray:
    """Forward pass (alpha * I + beta * A(X)) @ V(X) per head, concatenated,
    then the output projection; A(X) is the standard masked softmax."""
    x = _check_width(params, x)
    T = x.shape[0]
    mask = causal_mask(T)
    scale = 1.0 / np.sqrt(params.head_dim)
    head_outputs = []
    for n in range(params.heads):
        values = x @ params.w_value[n]
        logits = scale * (x @ params.w_query[n]) @ (x @ params.w_key[n]).T
        attn = linalg.masked_row_softmax(logits, mask, params.mask_const)
        head_outputs.append(params.alpha * values + params.beta * (attn @ values))
    return np.concatenate(head_outputs, axis=1) @ params.w_out
