"""SVD-free low-rank matrix completion driven to a target misfit level.

The decision variable is a factor pair (L, R) with X = L R^T; subproblems
are solved by spectral projected gradient over the Frobenius surrogate ball
and the misfit target is hit by Newton root finding on the regularization
budget.  Robust (Student's t) misfits and subspace re-weighting are drop-in
variants of the same driver.
"""

from .core import (
    FactorPair,
    Observations,
    SolverConfig,
    balanced_factors,
    form_product,
    frobenius_surrogate,
    load_matrix,
    load_matrix_csv,
    save_matrix,
    save_matrix_csv,
)
from .data import (
    InstanceSpec,
    contaminate,
    eta_absolute,
    gen_correlated_slices,
    gen_low_rank,
    gen_mask,
    load_triplets_csv,
    make_instance,
    observe,
    snr_db,
)
from .operators import (
    CompositeOp,
    MidpointOffsetOp,
    SamplingOp,
    apply_adjoint,
    apply_forward,
    apply_forward_factored,
    as_effective_sampling,
    source_receiver_to_midpoint_offset,
)
from .pareto import (
    CompletionProblem,
    ParetoTrace,
    convex_value_function,
    evaluate_derivative,
    evaluate_value_function,
    increase_rank,
    sigma_max,
    solve_bpdn,
)
from .penalties import Penalty, rho_gradient, rho_misfit, rho_value, students_t, two_norm
from .projections import (
    WeightedBallSpec,
    project_frobenius_ball,
    project_l1_simplex,
    project_nuclear_ball,
    project_weighted_frobenius_ball,
)
from .spg import SubproblemState, frobenius_ball_projector, spg_solve, spg_solve_matrix
from .weighting import (
    SliceStack,
    SubspaceWeights,
    apply_weight,
    extract_subspaces,
    frequency_continuation,
    solve_weighted_bpdn,
)

__version__ = "0.1.0"

__all__ = [
    "FactorPair",
    "Observations",
    "SolverConfig",
    "balanced_factors",
    "form_product",
    "frobenius_surrogate",
    "save_matrix",
    "load_matrix",
    "save_matrix_csv",
    "load_matrix_csv",
    "SamplingOp",
    "MidpointOffsetOp",
    "CompositeOp",
    "apply_forward",
    "apply_adjoint",
    "apply_forward_factored",
    "as_effective_sampling",
    "source_receiver_to_midpoint_offset",
    "Penalty",
    "two_norm",
    "students_t",
    "rho_value",
    "rho_misfit",
    "rho_gradient",
    "WeightedBallSpec",
    "project_frobenius_ball",
    "project_weighted_frobenius_ball",
    "project_nuclear_ball",
    "project_l1_simplex",
    "SubproblemState",
    "spg_solve",
    "spg_solve_matrix",
    "frobenius_ball_projector",
    "CompletionProblem",
    "ParetoTrace",
    "sigma_max",
    "evaluate_value_function",
    "evaluate_derivative",
    "solve_bpdn",
    "increase_rank",
    "convex_value_function",
    "SubspaceWeights",
    "SliceStack",
    "apply_weight",
    "extract_subspaces",
    "solve_weighted_bpdn",
    "frequency_continuation",
    "InstanceSpec",
    "gen_low_rank",
    "gen_mask",
    "observe",
    "contaminate",
    "gen_correlated_slices",
    "snr_db",
    "eta_absolute",
    "load_triplets_csv",
    "make_instance",
    "__version__",
]
