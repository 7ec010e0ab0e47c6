"""Uniform and exponentially-decaying kernel families and the attention
operators that map one family member to the next.

A member of the uniform family has ones on the diagonal and a constant
off-diagonal rho in [0, 1); a member of the exponential family has entries
exp(-gamma * |i - j|) with decay rate gamma > 0 (gamma = inf is the identity).
Both are strictly positive definite, and the operator L_out @ inv(L_in) built
from their lower Cholesky factors is elementwise non-negative whenever the
output kernel dominates the input one (rho_in <= rho_out, or
gamma_in >= gamma_out). For the exponential family both the factor and the
operator have closed forms, implemented here; the uniform family is routed
through the numeric Cholesky path, which doubles as a test oracle for the
closed forms.

Every operator is decomposed as A = diag(D) @ P with P row-stochastic, plus
the pre-softmax bias B = log(P) that realises P under a masked softmax with a
zero query-key term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import GammaOutOfRange, OrderViolation, RhoOutOfRange, ZeroRowSum

DEFAULT_NEG_BIAS = 1e30
NEGATIVE_ENTRY_TOL = 1e-12


@dataclass(frozen=True)
class AttentionOperator:
    """Lower-triangular non-negative attention matrix with its realization.

    matrix == diag(rescale) @ stochastic, rows of ``stochastic`` sum to 1, and
    exp(bias) recovers ``stochastic`` on the mask support (entries equal to
    ``-neg_bias_const`` stand in for log 0).
    """

    matrix: np.ndarray
    rescale: np.ndarray
    stochastic: np.ndarray
    bias: np.ndarray
    mask: np.ndarray
    neg_bias_const: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _require_count(T: int) -> int:
    if int(T) < 1:
        raise ValueError(f"size must be >= 1, got {T}")
    return int(T)


def _require_rho(rho: float, name: str = "rho") -> float:
    rho = float(rho)
    if not 0.0 <= rho < 1.0:
        raise RhoOutOfRange(f"{name} must lie in [0, 1), got {rho}")
    return rho


def _require_gamma(gamma: float, name: str = "gamma", allow_inf: bool = True) -> float:
    gamma = float(gamma)
    if math.isinf(gamma) and gamma > 0:
        if not allow_inf:
            raise GammaOutOfRange(f"{name} must be finite, got inf")
        return gamma
    if not gamma > 0.0 or math.isnan(gamma):
        raise GammaOutOfRange(f"{name} must be positive, got {gamma}")
    return gamma


def decay_helper_a(gamma: float) -> float:
    """sqrt(1 - exp(-2 * gamma)); equals 1 at gamma = inf."""
    gamma = _require_gamma(gamma)
    if math.isinf(gamma):
        return 1.0
    return math.sqrt(-math.expm1(-2.0 * gamma))


def gamma_for_a(a: float) -> float:
    """Inverse of :func:`decay_helper_a`: -0.5 * log(1 - a**2)."""
    a = float(a)
    if not 0.0 < a <= 1.0:
        raise GammaOutOfRange(f"a must lie in (0, 1], got {a}")
    if a == 1.0:
        return math.inf
    return -0.5 * math.log1p(-a * a)


def causal_mask(T: int) -> np.ndarray:
    """Lower-triangular 0/1 mask: position i may attend to j <= i."""
    return np.tril(np.ones((_require_count(T), _require_count(T))))


def uniform_kernel(T: int, rho: float) -> np.ndarray:
    """Unit diagonal, constant off-diagonal rho."""
    T = _require_count(T)
    rho = _require_rho(rho)
    return (1.0 - rho) * np.eye(T) + rho * np.ones((T, T))


def exp_kernel(T: int, gamma: float) -> np.ndarray:
    """Entries exp(-gamma * |i - j|); the identity at gamma = inf."""
    T = _require_count(T)
    gamma = _require_gamma(gamma)
    if math.isinf(gamma):
        return np.eye(T)
    idx = np.arange(T)
    return np.exp(-gamma * np.abs(idx[:, None] - idx[None, :]))


def exp_cholesky_analytic(T: int, gamma: float) -> np.ndarray:
    """Closed-form lower Cholesky factor of :func:`exp_kernel`.

    Column 1 holds exp(-gamma * (i - 1)); column j >= 2 holds
    a(gamma) * exp(-gamma * (i - j)) on and below the diagonal.
    """
    T = _require_count(T)
    gamma = _require_gamma(gamma)
    if math.isinf(gamma):
        return np.eye(T)
    idx = np.arange(T)
    lag = idx[:, None] - idx[None, :]
    factor = np.where(lag >= 0, np.exp(-gamma * np.maximum(lag, 0)), 0.0)
    factor[:, 1:] *= decay_helper_a(gamma)
    return factor


def espa_attention_matrix(T: int, gamma_in: float, gamma_out: float) -> np.ndarray:
    """Closed form of L(gamma_out) @ inv(L(gamma_in)) for the exponential family.

    Four cases: top-left entry 1; remaining diagonal a(gamma_out)/a(gamma_in);
    first column [exp(-g_out) - ratio * exp(-g_in)] * exp(-g_out * (i - 2));
    interior sub-diagonal ratio * [exp(-g_out) - exp(-g_in)]
    * exp(-g_out * (i - j - 1)). Non-negative whenever gamma_in >= gamma_out.
    """
    T = _require_count(T)
    gamma_in = _require_gamma(gamma_in, "gamma_in")
    gamma_out = _require_gamma(gamma_out, "gamma_out", allow_inf=False)
    if gamma_out > gamma_in:
        raise OrderViolation(
            f"gamma_out {gamma_out} exceeds gamma_in {gamma_in}; decay rates may only decrease"
        )
    ratio = decay_helper_a(gamma_out) / decay_helper_a(gamma_in)
    e_in = 0.0 if math.isinf(gamma_in) else math.exp(-gamma_in)
    e_out = math.exp(-gamma_out)
    idx = np.arange(T)
    lag = idx[:, None] - idx[None, :]
    a = np.where(
        lag >= 1,
        ratio * (e_out - e_in) * np.exp(-gamma_out * np.maximum(lag - 1, 0)),
        0.0,
    )
    if T > 1:
        a[1:, 0] = (e_out - ratio * e_in) * np.exp(-gamma_out * (idx[1:] - 1))
    np.fill_diagonal(a, ratio)
    a[0, 0] = 1.0
    return a


def espa_attention_analytic(
    T: int,
    gamma_in: float,
    gamma_out: float,
    neg_bias_const: float = DEFAULT_NEG_BIAS,
) -> AttentionOperator:
    """Exponential-family attention operator with its D/P/B decomposition."""
    return decompose_dpb(espa_attention_matrix(T, gamma_in, gamma_out), neg_bias_const)


def uspa_attention(
    T: int,
    rho_in: float,
    rho_out: float,
    neg_bias_const: float = DEFAULT_NEG_BIAS,
) -> AttentionOperator:
    """Uniform-family attention operator, L(rho_out) @ inv(L(rho_in)).

    There is no closed form for this family, so the factors are computed
    numerically and combined by a triangular solve.
    """
    return decompose_dpb(uspa_attention_matrix(T, rho_in, rho_out), neg_bias_const)


def uspa_attention_matrix(T: int, rho_in: float, rho_out: float) -> np.ndarray:
    """Bare matrix of :func:`uspa_attention`."""
    T = _require_count(T)
    rho_in = _require_rho(rho_in, "rho_in")
    rho_out = _require_rho(rho_out, "rho_out")
    if rho_out < rho_in:
        raise OrderViolation(
            f"rho_out {rho_out} below rho_in {rho_in}; off-diagonals may only increase"
        )
    if rho_in == rho_out:
        return np.eye(T)
    l_in = linalg.cholesky(uniform_kernel(T, rho_in))
    l_out = linalg.cholesky(uniform_kernel(T, rho_out))
    return np.tril(linalg.solve_lower_triangular_right(l_out, l_in))


def noncausal_spa_attention(T: int, family: str, param_in: float, param_out: float) -> np.ndarray:
    """Non-causal analogue: S_out @ inv(S_in) with S the symmetric PSD square
    root of the kernel instead of the Cholesky factor.

    Not triangular. Non-negativity is exact for the uniform family (which is
    closed under square roots, inverses and products) and holds empirically
    for the exponential one.
    """
    T = _require_count(T)
    if family == "uniform":
        p_in = _require_rho(param_in, "param_in")
        p_out = _require_rho(param_out, "param_out")
        if p_out < p_in:
            raise OrderViolation(f"rho_out {p_out} below rho_in {p_in}")
        if p_in == p_out:
            return np.eye(T)
        s_in = _symmetric_sqrt(uniform_kernel(T, p_in))
        s_out = _symmetric_sqrt(uniform_kernel(T, p_out))
    elif family == "exponential":
        p_in = _require_gamma(param_in, "param_in")
        p_out = _require_gamma(param_out, "param_out", allow_inf=False)
        if p_out > p_in:
            raise OrderViolation(f"gamma_out {p_out} exceeds gamma_in {p_in}")
        if p_in == p_out:
            return np.eye(T)
        s_in = _symmetric_sqrt(exp_kernel(T, p_in))
        s_out = _symmetric_sqrt(exp_kernel(T, p_out))
    else:
        raise ValueError(f"unknown family {family!r}; expected 'uniform' or 'exponential'")
    # A = S_out @ inv(S_in); both square roots are symmetric.
    return np.linalg.solve(s_in, s_out).T


def _symmetric_sqrt(sigma: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(sigma)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def decompose_dpb(a: np.ndarray, neg_bias_const: float = DEFAULT_NEG_BIAS) -> AttentionOperator:
    """Split a lower-triangular non-negative matrix into rescale and
    stochastic parts: A = diag(D) @ P with D the row sums, plus B = log(P)
    (with -neg_bias_const standing in for log 0) and the causal mask.

    Entries in [-1e-12, 0) are treated as floating-point noise and clamped to
    zero; anything more negative contradicts the operator construction and is
    rejected.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not float(neg_bias_const) > 0.0:
        raise ValueError(f"neg_bias_const must be positive, got {neg_bias_const}")
    if np.any(np.triu(a, 1) != 0.0):
        raise ValueError("matrix has nonzero entries above the diagonal")
    low = float(a.min())
    if low < -NEGATIVE_ENTRY_TOL:
        raise ValueError(
            f"entry {low:.3e} below -{NEGATIVE_ENTRY_TOL:.0e}: operator is not non-negative"
        )
    a = np.where(a > 0.0, a, 0.0)
    rescale = a.sum(axis=1)
    if rescale.min() <= 1e-14:
        raise ZeroRowSum(f"row {int(rescale.argmin())} sums to {rescale.min():.3e}")
    stochastic = a / rescale[:, None]
    positive = stochastic > 0.0
    bias = np.where(positive, np.log(np.where(positive, stochastic, 1.0)), -float(neg_bias_const))
    return AttentionOperator(
        matrix=a,
        rescale=rescale,
        stochastic=stochastic,
        bias=bias,
        mask=causal_mask(a.shape[0]),
        neg_bias_const=float(neg_bias_const),
    )
