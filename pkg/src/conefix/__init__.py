"""Nonexpansive maps on cones: metrics, semidifferentials, spectral bounds, Shapley operators."""

from .cone_metrics import (
    ConeVector,
    hilbert_metric,
    local_norm,
    log_exp_conjugate,
    oscillation,
    scale_lower,
    scale_upper,
    thompson_metric,
)
from .games import (
    GameGraph,
    certify_bias_uniqueness,
    convergence_report,
    load_fixture,
    mean_payoff,
    shapley_operator,
    solve_additive_eigenpair,
    value_iteration,
)
from .semidiff import (
    AffineTerm,
    MinMaxAffineOp,
    Node,
    compose,
    compose_semidiff,
    directional_derivative_fd,
    semidifferential,
)
from .spectral import (
    OSCILLATION,
    SUP_NORM,
    NormKind,
    SamplePlan,
    bonsall_estimate,
    certify_contraction,
    op_seminorm,
)

__version__ = "0.1.0"
