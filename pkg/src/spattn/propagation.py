"""Kernel-space evolution of attention-only transformer stacks at
initialization, in the infinite-width picture where one block maps the T x T
location kernel to A @ Sigma @ A.T (averaged over heads), optionally combined
with a shortcut branch and a normalisation step.

Covers the two signal-preserving constructions plus two baselines: identity
attention (value-skipinit) and softmax attention with linear-distance head
biases (ALiBi), which is the configuration that exhibits rank collapse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import linalg
from .errors import ConfigError, DegenerateDiagonal, DimensionMismatch, SpattnError
from .kernels import (
    causal_mask,
    espa_attention_matrix,
    uspa_attention_matrix,
    _require_rho,
)
from .schedules import (
    espa_schedule,
    repeated_token_corrections,
    skip_adjusted_gamma,
    skip_adjusted_rho,
    uspa_schedule,
)

METHODS = ("espa", "uspa", "value_skipinit", "softmax_alibi")
NORM_PLACEMENTS = ("none", "pre", "post")
NORMALIZED_SKIP_TOL = 1e-12
DIAGONAL_TOL = 1e-14


@dataclass(frozen=True)
class BlockSpec:
    """Per-block recipe: attention method, head count, shortcut and residual
    weights, and where (if anywhere) normalisation sits."""

    method: str
    heads: int = 8
    shortcut_weight: float = 0.0
    residual_weight: float = 1.0
    norm_placement: str = "none"

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.norm_placement not in NORM_PLACEMENTS:
            raise ConfigError(
                f"unknown norm_placement {self.norm_placement!r}; expected one of {NORM_PLACEMENTS}"
            )
        if int(self.heads) < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if not 0.0 <= self.shortcut_weight <= 1.0:
            raise ConfigError(f"shortcut_weight must lie in [0, 1], got {self.shortcut_weight}")
        if self.residual_weight < 0.0:
            raise ConfigError(f"residual_weight must be >= 0, got {self.residual_weight}")
        if self.method in ("espa", "uspa") and self.shortcut_weight > 0.0:
            gap = abs(self.shortcut_weight**2 + self.residual_weight**2 - 1.0)
            if gap > NORMALIZED_SKIP_TOL:
                raise ConfigError(
                    "signal-preserving methods take shortcuts only in normalised form: "
                    f"alpha^2 + beta^2 = 1 violated by {gap:.3e}"
                )


@dataclass(frozen=True)
class StackConfig:
    """Stack-wide recipe: depth, sequence length, shared block spec (with
    optional per-block overrides of the skip/norm/head fields), terminal
    schedule parameters, repeated-token fraction and rng seed."""

    depth: int
    seq_len: int
    block: BlockSpec
    gamma_final: float = 0.005
    rho_final: float = 0.8
    repeated_fraction: float = 0.0
    seed: int = 0
    block_overrides: Mapping[int, BlockSpec] = field(default_factory=dict)

    def validate(self) -> None:
        if int(self.depth) < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if int(self.seq_len) < 2:
            raise ConfigError(f"seq_len must be >= 2, got {self.seq_len}")
        _require_rho(self.repeated_fraction, "repeated_fraction")
        self.block.validate()
        for index, spec in self.block_overrides.items():
            if not 1 <= int(index) <= int(self.depth):
                raise ConfigError(f"block override index {index} outside 1..{self.depth}")
            if spec.method != self.block.method:
                raise ConfigError(
                    "block overrides may not change the method "
                    f"(stack is {self.block.method!r}, block {index} asks {spec.method!r})"
                )
            spec.validate()

    def spec_for(self, block_index: int) -> BlockSpec:
        return self.block_overrides.get(block_index, self.block)


@dataclass(frozen=True)
class KernelMetrics:
    """Rank-collapse indicators of one kernel matrix."""

    mean_offdiag_cosine: float
    min_offdiag_cosine: float
    max_diag: float
    min_diag: float
    collapse_distance: float


@dataclass(frozen=True)
class PropagationTrace:
    """Per-block kernels (index 0 is the input kernel), their cosine
    normalisations, and metrics."""

    kernels: list
    normalized: list
    metrics: list

    @property
    def depth(self) -> int:
        return len(self.kernels) - 1


def vocabulary_distribution(r: float) -> np.ndarray:
    """Token distribution whose pairwise collision probability is exactly r.

    Uniform over ceil(1/r) tokens when 1/r is integral; otherwise one token
    takes extra mass so that sum(q**2) == r holds exactly.
    """
    r = _require_rho(r, "r")
    if r == 0.0:
        raise ValueError("r = 0 has no finite vocabulary; ids are all distinct")
    size = int(np.ceil(1.0 / r))
    if abs(size * r - 1.0) < 1e-12:
        return np.full(size, 1.0 / size)
    disc = 1.0 - size + r * size * (size - 1)
    heavy = (1.0 + np.sqrt(disc)) / size
    probs = np.full(size, (1.0 - heavy) / (size - 1))
    probs[0] = heavy
    return probs


def sample_token_ids(T: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """Token ids drawn i.i.d. across locations from
    :func:`vocabulary_distribution`, so any two locations share an id with
    probability exactly r; r = 0 gives all-distinct ids."""
    T = int(T)
    r = _require_rho(r, "r")
    if r == 0.0:
        return np.arange(T)
    probs = vocabulary_distribution(r)
    return rng.choice(len(probs), size=T, p=probs)


def sample_input_kernel(T: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """0/1 Gram matrix of sampled token ids: unit diagonal, entry 1 where two
    locations carry the same token. Expected off-diagonal is exactly r."""
    ids = sample_token_ids(T, r, rng)
    return (ids[:, None] == ids[None, :]).astype(float)


def attention_step(sigma: np.ndarray, a: np.ndarray) -> np.ndarray:
    """One attention block in kernel space: A @ Sigma @ A.T, symmetrized."""
    sigma = np.asarray(sigma, dtype=float)
    a = np.asarray(a, dtype=float)
    if sigma.shape != a.shape:
        raise DimensionMismatch(f"kernel shape {sigma.shape} != operator shape {a.shape}")
    out = a @ sigma @ a.T
    return 0.5 * (out + out.T)


def multihead_attention_step(sigma: np.ndarray, heads: Sequence[np.ndarray]) -> np.ndarray:
    """Average of the per-head kernel maps, (1/h) * sum_n A_n @ Sigma @ A_n.T."""
    if len(heads) == 0:
        raise DimensionMismatch("need at least one head")
    out = attention_step(sigma, heads[0])
    for a in heads[1:]:
        out = out + attention_step(sigma, a)
    return out / len(heads)


def alibi_attention_matrices(T: int, h: int) -> list:
    """Masked-softmax attention matrices for h heads with linear distance
    penalties: head n has slope 2 ** (-8n/h), logits -slope * (i - j) for
    j <= i, and a zero query-key term."""
    T = int(T)
    h = int(h)
    if h < 1:
        raise DimensionMismatch(f"heads must be >= 1, got {h}")
    mask = causal_mask(T)
    idx = np.arange(T)
    distance = (idx[:, None] - idx[None, :]).astype(float)
    matrices = []
    for n in range(1, h + 1):
        slope = 2.0 ** (-8.0 * n / h)
        matrices.append(linalg.masked_row_softmax(-slope * distance, mask))
    return matrices


def skip_step(sigma: np.ndarray, alpha: float, beta: float, residual: np.ndarray) -> np.ndarray:
    """Shortcut combination alpha**2 * Sigma + beta**2 * residual."""
    sigma = np.asarray(sigma, dtype=float)
    residual = np.asarray(residual, dtype=float)
    if sigma.shape != residual.shape:
        raise DimensionMismatch(f"kernel shape {sigma.shape} != residual shape {residual.shape}")
    return float(alpha) ** 2 * sigma + float(beta) ** 2 * residual


def normalize_step(sigma: np.ndarray) -> np.ndarray:
    """Rescale to cosine similarities: diag(Sigma)^-1/2 Sigma diag(Sigma)^-1/2."""
    sigma = np.asarray(sigma, dtype=float)
    diag = np.diag(sigma)
    if diag.min() <= DIAGONAL_TOL:
        raise DegenerateDiagonal(
            f"diagonal entry {diag.min():.3e} at location {int(diag.argmin())} "
            f"is at or below {DIAGONAL_TOL:.0e}"
        )
    inv_root = 1.0 / np.sqrt(diag)
    return sigma * np.outer(inv_root, inv_root)


def rank_collapse_metrics(sigma: np.ndarray) -> KernelMetrics:
    """Cosine-similarity summary of a kernel: mean/min off-diagonal cosine,
    raw diagonal range, and the max |cosine - 1| distance to the fully
    collapsed (all-ones) state."""
    sigma = np.asarray(sigma, dtype=float)
    cosine = normalize_step(sigma)
    off = cosine[~np.eye(cosine.shape[0], dtype=bool)]
    diag = np.diag(sigma)
    return KernelMetrics(
        mean_offdiag_cosine=float(off.mean()),
        min_offdiag_cosine=float(off.min()),
        max_diag=float(diag.max()),
        min_diag=float(diag.min()),
        collapse_distance=float(np.max(np.abs(off - 1.0))),
    )


def run_stack(config: StackConfig, sigma0: np.ndarray | None = None) -> PropagationTrace:
    """Propagate a kernel through the configured stack.

    Per block, in order: pre-normalisation of the residual branch input (the
    shortcut sees the raw kernel), the multi-head attention step, the shortcut
    combination, and post-normalisation of the sum. The input kernel defaults
    to a sampled repeated-token kernel (the identity when the repeated
    fraction is zero).
    """
    config.validate()
    T = int(config.seq_len)
    if sigma0 is None:
        rng = linalg.rng_stream(config.seed)
        sigma0 = sample_input_kernel(T, config.repeated_fraction, rng)
    else:
        sigma0 = np.asarray(sigma0, dtype=float)
        if sigma0.shape != (T, T):
            raise DimensionMismatch(f"sigma0 shape {sigma0.shape} != ({T}, {T})")
    heads_per_block = _attention_heads(config)
    kernels = [sigma0]
    normalized = [normalize_step(sigma0)]
    metrics = [rank_collapse_metrics(sigma0)]
    sigma = sigma0
    for l in range(1, int(config.depth) + 1):
        spec = config.spec_for(l)
        try:
            residual_in = normalize_step(sigma) if spec.norm_placement == "pre" else sigma
            attn = multihead_attention_step(residual_in, heads_per_block[l - 1])
            sigma = skip_step(sigma, spec.shortcut_weight, spec.residual_weight, attn)
            if spec.norm_placement == "post":
                sigma = normalize_step(sigma)
            sigma = 0.5 * (sigma + sigma.T)
            kernels.append(sigma)
            normalized.append(normalize_step(sigma))
            metrics.append(rank_collapse_metrics(sigma))
        except SpattnError as exc:
            raise type(exc)(f"block {l}: {exc}") from exc
    return PropagationTrace(kernels=kernels, normalized=normalized, metrics=metrics)


def _attention_heads(config: StackConfig) -> list:
    """Per-block head matrices. The signal-preserving methods share one matrix
    across heads at initialization, so a single entry stands for all heads."""
    T = int(config.seq_len)
    L = int(config.depth)
    method = config.block.method
    r = float(config.repeated_fraction)
    blocks = []
    if method == "espa":
        schedule = espa_schedule(L, config.gamma_final)
        any_skip = any(
            config.spec_for(l).shortcut_weight > 0.0 for l in range(1, L + 1)
        )
        corrections = None
        if r > 0.0:
            if any_skip:
                raise ConfigError(
                    "repeated-token corrections assume a skipless telescoping product; "
                    "use repeated_fraction = 0 with shortcuts"
                )
            corrections = repeated_token_corrections(schedule, T, r)
        for l in range(1, L + 1):
            spec = config.spec_for(l)
            gamma_in = schedule.gammas[l - 1]
            gamma_out = schedule.gammas[l]
            try:
                if spec.shortcut_weight > 0.0:
                    gamma_out = skip_adjusted_gamma(gamma_in, gamma_out, spec.shortcut_weight)
                a = espa_attention_matrix(T, gamma_in, gamma_out)
            except SpattnError as exc:
                raise type(exc)(f"block {l}: {exc}") from exc
            if corrections is not None:
                d_out = corrections.diagonals[l]
                d_in = corrections.diagonals[l - 1]
                a = a * (np.sqrt(d_in)[None, :] / np.sqrt(d_out)[:, None])
            blocks.append([a])
    elif method == "uspa":
        schedule = uspa_schedule(L, config.rho_final, r)
        for l in range(1, L + 1):
            spec = config.spec_for(l)
            rho_in = schedule.rhos[l - 1]
            rho_out = schedule.rhos[l]
            try:
                if spec.shortcut_weight > 0.0:
                    rho_out = skip_adjusted_rho(
                        rho_in, rho_out, spec.shortcut_weight, spec.residual_weight
                    )
                blocks.append([uspa_attention_matrix(T, rho_in, rho_out)])
            except SpattnError as exc:
                raise type(exc)(f"block {l}: {exc}") from exc
    elif method == "value_skipinit":
        identity = np.eye(T)
        blocks = [[identity] for _ in range(L)]
    elif method == "softmax_alibi":
        cache = {}
        for l in range(1, L + 1):
            h = int(config.spec_for(l).heads)
            if h not in cache:
                cache[h] = alibi_attention_matrices(T, h)
            blocks.append(cache[h])
    else:  # pragma: no cover - BlockSpec.validate rejects unknown methods
        raise ConfigError(f"unknown method {method!r}")
    return blocks
