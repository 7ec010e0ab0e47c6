"""Exception types shared across the package."""


class SpattnError(Exception):
    """Base class for all package-specific errors."""


class NotSymmetric(SpattnError):
    """Matrix expected to be symmetric is not, within tolerance."""


class NotPositiveDefinite(SpattnError):
    """A Cholesky pivot fell at or below the positivity tolerance."""


class SingularFactor(SpattnError):
    """Triangular factor has a (near-)zero diagonal entry."""


class RhoOutOfRange(SpattnError):
    """Uniform-kernel off-diagonal value outside [0, 1)."""


class GammaOutOfRange(SpattnError):
    """Exponential decay rate must be positive (or the infinite sentinel)."""


class OrderViolation(SpattnError):
    """Kernel parameters violate the ordering that guarantees a non-negative
    attention operator (rho may only increase, gamma may only decrease)."""


class ZeroRowSum(SpattnError):
    """Attention-matrix row sums to numerically zero; the rescale/stochastic
    decomposition is undefined."""


class ShortcutTooLarge(SpattnError):
    """Shortcut weight exceeds what the attention diagonal can absorb; the
    adjusted decay rate would not be real (or positive)."""


class DegenerateDiagonal(SpattnError):
    """Kernel diagonal entry too small to normalize against."""


class DimensionMismatch(SpattnError):
    """Inconsistent shapes, or width not divisible by the head count."""


class ExactnessViolated(SpattnError):
    """Finite-width kernel deviated from the infinite-width prediction."""

    def __init__(self, block: int, deviation: float, tolerance: float):
        super().__init__(
            f"block {block}: deviation {deviation:.3e} exceeds tolerance {tolerance:.3e}"
        )
        self.block = block
        self.deviation = deviation
        self.tolerance = tolerance


class ConfigError(SpattnError):
    """Invalid or unparseable run configuration."""
