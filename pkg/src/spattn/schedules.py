"""Depth schedules for the kernel-family parameters, repeated-token diagonal
corrections, and the shortcut-weight adjustment of the decay rate.

The exponential schedule keeps the attention diagonal a(gamma_l)/a(gamma_{l-1})
constant across blocks by placing a_l = a_L ** (l / L); the uniform schedule
interpolates rho linearly from the repeated-token fraction r up to rho_L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GammaOutOfRange, OrderViolation, RhoOutOfRange, ShortcutTooLarge
from .kernels import (
    DEFAULT_NEG_BIAS,
    AttentionOperator,
    decay_helper_a,
    decompose_dpb,
    espa_attention_matrix,
    exp_cholesky_analytic,
    _require_gamma,
    _require_rho,
)


@dataclass(frozen=True)
class DecaySchedule:
    """Per-block decay rates: gammas[0] = inf, strictly decreasing, gammas[L] > 0."""

    gammas: np.ndarray
    a_values: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.gammas) - 1


@dataclass(frozen=True)
class UniformSchedule:
    """Per-block uniform off-diagonals: rhos[0] = r, non-decreasing, rhos[L] < 1."""

    rhos: np.ndarray
    repeated_fraction: float

    @property
    def depth(self) -> int:
        return len(self.rhos) - 1


@dataclass(frozen=True)
class DiagonalCorrection:
    """Expected per-location kernel diagonals under repeated tokens, one row
    per block; row 0 is all ones."""

    diagonals: np.ndarray
    repeated_fraction: float

    @property
    def depth(self) -> int:
        return self.diagonals.shape[0] - 1


def espa_schedule(L: int, gamma_L: float) -> DecaySchedule:
    """Decay rates gamma_l = -0.5 * log(1 - a_L ** (2l/L)), gamma_0 = inf.

    The constant ratio a_l / a_{l-1} = a_L ** (1/L) makes the attention
    diagonal identical across blocks.
    """
    if int(L) < 1:
        raise ValueError(f"depth must be >= 1, got {L}")
    L = int(L)
    gamma_L = _require_gamma(gamma_L, "gamma_L", allow_inf=False)
    a_final = decay_helper_a(gamma_L)
    gammas = np.empty(L + 1)
    a_values = np.empty(L + 1)
    gammas[0] = math.inf
    a_values[0] = 1.0
    for l in range(1, L + 1):
        a_values[l] = a_final ** (l / L)
        gammas[l] = -0.5 * math.log1p(-(a_final ** (2.0 * l / L)))
    gammas[L] = gamma_L
    a_values[L] = a_final
    return DecaySchedule(gammas=gammas, a_values=a_values)


def uspa_schedule(L: int, rho_L: float, r: float = 0.0) -> UniformSchedule:
    """Linear ramp rho_l = r + (rho_L - r) * l / L, starting at the
    repeated-token fraction."""
    if int(L) < 1:
        raise ValueError(f"depth must be >= 1, got {L}")
    L = int(L)
    rho_L = _require_rho(rho_L, "rho_L")
    r = _require_rho(r, "r")
    if r > rho_L:
        raise RhoOutOfRange(f"repeated fraction {r} exceeds terminal rho {rho_L}")
    rhos = r + (rho_L - r) * np.arange(L + 1) / L
    rhos[0] = r
    rhos[L] = rho_L
    return UniformSchedule(rhos=rhos, repeated_fraction=r)


def repeated_token_corrections(schedule: DecaySchedule, T: int, r: float) -> DiagonalCorrection:
    """Per-block expected diagonals diag(L_l @ S @ L_l.T) against the averaged
    input kernel S = (1 - r) I + r 11^T, computed with the analytic factors.

    For a factor with unit row norms this reduces to
    (1 - r) + r * (row sums of L_l) ** 2.
    """
    r = _require_rho(r, "r")
    T = int(T)
    diagonals = np.ones((schedule.depth + 1, T))
    if r > 0.0:
        # r == 0 keeps exact ones: the factors have unit row norms.
        for l in range(1, schedule.depth + 1):
            factor = exp_cholesky_analytic(T, schedule.gammas[l])
            diagonals[l] = (1.0 - r) * np.sum(factor**2, axis=1) + r * np.sum(factor, axis=1) ** 2
    return DiagonalCorrection(diagonals=diagonals, repeated_fraction=r)


def corrected_attention(
    l: int,
    schedule: DecaySchedule,
    corrections: DiagonalCorrection,
    T: int,
    neg_bias_const: float = DEFAULT_NEG_BIAS,
) -> AttentionOperator:
    """Attention operator for block l with the diagonal correction applied:
    diag(d_l) ** -1/2 @ A_l @ diag(d_{l-1}) ** 1/2.

    Telescoping then gives the block product diag(d_l) ** -1/2 @ L_l, whose
    expected kernel has unit diagonal.
    """
    if not 1 <= int(l) <= schedule.depth:
        raise ValueError(f"block index {l} outside 1..{schedule.depth}")
    if corrections.diagonals.shape != (schedule.depth + 1, int(T)):
        raise ValueError(
            f"corrections shape {corrections.diagonals.shape} does not match "
            f"(depth+1, T) = ({schedule.depth + 1}, {T})"
        )
    l = int(l)
    raw = espa_attention_matrix(int(T), schedule.gammas[l - 1], schedule.gammas[l])
    d_out = corrections.diagonals[l]
    d_in = corrections.diagonals[l - 1]
    scaled = raw * (np.sqrt(d_in)[None, :] / np.sqrt(d_out)[:, None])
    return decompose_dpb(scaled, neg_bias_const)


def skip_adjusted_gamma(gamma_prev: float, gamma_target: float, alpha: float) -> float:
    """Outgoing decay rate that preserves the off-diagonal dilution factor
    alpha**2 + (1 - alpha**2) * lambda**2 when a normalised shortcut of weight
    alpha is added around the attention block.

    lambda_0 = a(gamma_target) / a(gamma_prev) is the skipless attention
    diagonal; the adjusted diagonal is
    lambda_alpha = sqrt((lambda_0**2 - alpha**2) / (1 - alpha**2)), which is
    only real when lambda_0 >= alpha. Callers handle infeasibility by raising
    gamma_target, not by clamping here.
    """
    gamma_prev = _require_gamma(gamma_prev, "gamma_prev")
    gamma_target = _require_gamma(gamma_target, "gamma_target", allow_inf=False)
    if gamma_target > gamma_prev:
        raise OrderViolation(
            f"gamma_target {gamma_target} exceeds gamma_prev {gamma_prev}"
        )
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return gamma_target
    a_prev = decay_helper_a(gamma_prev)
    lambda0 = decay_helper_a(gamma_target) / a_prev
    if lambda0 < alpha:
        raise ShortcutTooLarge(
            f"attention diagonal {lambda0:.6f} below shortcut weight {alpha}; "
            "the adjusted rate would not be real"
        )
    lambda_alpha_sq = (lambda0**2 - alpha**2) / (1.0 - alpha**2)
    adjusted = -0.5 * math.log1p(-lambda_alpha_sq * a_prev**2)
    if not adjusted > 0.0:
        raise GammaOutOfRange(
            f"adjusted decay rate {adjusted} is not positive (alpha equals the diagonal ratio)"
        )
    return adjusted


def skip_adjusted_rho(rho_prev: float, rho_target: float, alpha: float, beta: float) -> float:
    """Residual-branch rho whose normalised-skip combination lands on
    rho_target: (rho_target - alpha**2 * rho_prev) / beta**2.

    The uniform family is closed under the skip combination, so this
    adjustment is exact. The result must stay in [rho_prev, 1)."""
    rho_prev = _require_rho(rho_prev, "rho_prev")
    rho_target = _require_rho(rho_target, "rho_target")
    alpha = float(alpha)
    beta = float(beta)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    residual = (rho_target - alpha**2 * rho_prev) / beta**2
    if residual < rho_prev - 1e-15:
        raise OrderViolation(
            f"residual rho {residual:.6f} below rho_prev {rho_prev}; schedule not admissible"
        )
    if residual >= 1.0:
        raise ShortcutTooLarge(
            f"residual rho {residual:.6f} reaches 1; shortcut weight {alpha} too large "
            f"for the step {rho_prev} -> {rho_target}"
        )
    return max(residual, rho_prev)
