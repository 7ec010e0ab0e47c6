"""Signal-preserving attention operators and kernel-space signal propagation
for shortcut-free transformers.

The package builds lower-triangular non-negative attention operators from
Cholesky factors of uniform or exponentially-decaying kernel families,
propagates T x T location kernels through configurable attention-only stacks
in the infinite-width picture, and validates the predictions with
finite-width forward passes.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateDiagonal,
    DimensionMismatch,
    ExactnessViolated,
    GammaOutOfRange,
    NotPositiveDefinite,
    NotSymmetric,
    OrderViolation,
    RhoOutOfRange,
    ShortcutTooLarge,
    SingularFactor,
    SpattnError,
    ZeroRowSum,
)
from .linalg import (
    cholesky,
    masked_row_softmax,
    rng_stream,
    sample_gaussian_fan_in,
    sample_orthogonal,
    solve_lower_triangular_right,
)
from .kernels import (
    AttentionOperator,
    causal_mask,
    decay_helper_a,
    decompose_dpb,
    espa_attention_analytic,
    espa_attention_matrix,
    exp_cholesky_analytic,
    exp_kernel,
    gamma_for_a,
    noncausal_spa_attention,
    uniform_kernel,
    uspa_attention,
    uspa_attention_matrix,
)
from .schedules import (
    DecaySchedule,
    DiagonalCorrection,
    UniformSchedule,
    corrected_attention,
    espa_schedule,
    repeated_token_corrections,
    skip_adjusted_gamma,
    skip_adjusted_rho,
    uspa_schedule,
)
from .propagation import (
    BlockSpec,
    KernelMetrics,
    PropagationTrace,
    StackConfig,
    alibi_attention_matrices,
    attention_step,
    multihead_attention_step,
    normalize_step,
    rank_collapse_metrics,
    run_stack,
    sample_input_kernel,
    sample_token_ids,
    skip_step,
    vocabulary_distribution,
)
from .finite_width import (
    AttentionLayerParams,
    ExactnessReport,
    ValueSkipInitParams,
    build_attention_layer,
    build_espa_layer,
    build_value_skipinit_layer,
    empirical_kernel,
    forward_attention,
    orthonormal_row_inputs,
    realized_attention,
    sample_embeddings,
    validate_exactness,
    value_skipinit_forward,
)
