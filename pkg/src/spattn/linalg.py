"""Dense float64 matrix primitives used by every other module.

Matrices are plain ``numpy.ndarray`` objects in row-major layout. Random
draws come from counter-based Philox streams, so any (seed, shape) pair
yields bit-identical values regardless of machine or thread count.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, NotSymmetric, SingularFactor

PIVOT_TOL = 1e-14
SYMMETRY_TOL = 1e-12
DEFAULT_MASK_CONST = 1e30


def rng_stream(seed: int) -> np.random.Generator:
    """Deterministic random stream for the whole artifact (Philox)."""
    return np.random.Generator(np.random.Philox(int(seed)))


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular factor with positive diagonal, L @ L.T == m.

    No jitter is added on failure: the kernel matrices in scope are strictly
    positive definite, so a pivot at or below ``PIVOT_TOL`` indicates a bug in
    the caller and is surfaced as :class:`NotPositiveDefinite`.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    skew = float(np.max(np.abs(m - m.T)))
    if skew > SYMMETRY_TOL * scale:
        raise NotSymmetric(f"asymmetry {skew:.3e} exceeds {SYMMETRY_TOL:.0e} of scale {scale:.3e}")
    n = m.shape[0]
    lower = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= PIVOT_TOL:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at column {j}")
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (m[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def solve_lower_triangular_right(a: np.ndarray, l: np.ndarray) -> np.ndarray:
    """Solve X @ l == a for X, with l lower triangular."""
    a = np.asarray(a, dtype=float)
    l = np.asarray(l, dtype=float)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise SingularFactor(f"factor must be square, got shape {l.shape}")
    if a.ndim != 2 or a.shape[1] != l.shape[0]:
        raise SingularFactor(f"shape mismatch: a is {a.shape}, factor is {l.shape}")
    diag = np.abs(np.diag(l))
    if diag.min() <= PIVOT_TOL:
        raise SingularFactor(f"factor diagonal entry {diag.min():.3e} at or below {PIVOT_TOL:.0e}")
    # X @ l == a  <=>  l.T @ X.T == a.T, an upper-triangular solve.
    return scipy.linalg.solve_triangular(l.T, a.T, lower=False).T


def masked_row_softmax(
    logits: np.ndarray, mask: np.ndarray, gamma_const: float = DEFAULT_MASK_CONST
) -> np.ndarray:
    """Row-wise softmax with hard masking: positions where mask == 0 carry
    exactly zero probability.

    ``gamma_const`` is the large positive constant of the additive-mask
    formulation (logits minus gamma at masked positions). Masked entries are
    excluded from the normalisation outright, which is the exact limit the
    additive form approximates, so the constant's value never enters the
    arithmetic. The row max is subtracted before exponentiation.
    """
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask)
    if logits.shape != mask.shape:
        raise ValueError(f"logits shape {logits.shape} != mask shape {mask.shape}")
    if not float(gamma_const) > 0.0:
        raise ValueError(f"gamma_const must be positive, got {gamma_const}")
    keep = mask != 0
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask entries must be 0 or 1")
    row_alive = keep.any(axis=1)
    if not row_alive.all():
        raise ValueError(f"mask row {int(np.argmin(row_alive))} excludes every position")
    shifted = np.where(keep, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    weights = np.where(keep, np.exp(shifted), 0.0)
    return weights / weights.sum(axis=1, keepdims=True)


def sample_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform (rotation-invariant) orthogonal matrix.

    Orthonormalises a square standard-Gaussian draw and flips signs so the
    triangular factor has positive diagonal, which makes the distribution
    exactly Haar.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    return q * np.where(np.diag(r) < 0.0, -1.0, 1.0)


def sample_gaussian_fan_in(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. N(0, 1/rows) entries; fan-in is the input dimension under the
    x @ W convention."""
    if rows < 1 or cols < 1:
        raise ValueError(f"shape must be positive, got ({rows}, {cols})")
    return rng.standard_normal((rows, cols)) / np.sqrt(rows)
