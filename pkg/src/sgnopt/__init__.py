"""Sparse Gauss-Newton toolkit for equilibrium-constrained inverse design.

The package computes Gauss-Newton search directions through a sparse
saddle-point reformulation whose parameter block is exactly the dense
reduced-Hessian step, alongside the surrounding solver zoo (dense GN, block
substitution, matrix-free CG, gradient descent, L-BFGS variants, regularized
GGN/Newton, SQP), forward simulators, benchmark problems, and a CLI harness.
"""
from .errors import (
    CapabilityMissing,
    DimensionMismatch,
    ForwardSimFailure,
    InfeasiblePoint,
    LineSearchFailure,
    MeritLineSearchFailure,
    NegativeCurvature,
    NoConvergence,
    NonSquareParamJacobian,
    NotPositiveDefinite,
    NumericalBlowup,
    SingularConstraintJacobian,
    SingularMatrix,
    ToolkitError,
    TripletIndexError,
)
from .forward import (
    MassSpringModel,
    Rollout,
    StaticEquilibrium,
    export_rollout_csv,
    rollout_explicit,
    rollout_implicit,
    solve_static,
    stacked_constraints,
)
from .linear_solvers import (
    DenseFactorization,
    ReducedOperator,
    SolveReport,
    SparseFactorization,
    StabilizationConfig,
    cg_reduced,
    cholesky_dense,
    factor_sparse,
    solve_kkt_stabilized,
    stabilized_matrix,
)
from .optimize import (
    METHODS,
    IterationRecord,
    OptimizerConfig,
    OptimizerRun,
    SearchDirection,
    SqpStep,
    direction_bgn,
    direction_cg_gn,
    direction_dgn,
    direction_gd,
    direction_ggn,
    direction_lbfgs,
    direction_newton,
    direction_sgn,
    minimize,
    project_direction_bounds,
    run_sqp,
    sqp_step,
)
from .sensitivity import (
    EquilibriumProblem,
    GnBlocks,
    KktSystem,
    adjoint_gradient,
    adjoint_multipliers,
    assemble_kkt_newton,
    assemble_sgn,
    dense_full_hessian,
    dense_gn_hessian,
    ggn_blocks,
    gn_blocks,
    kkt_from_blocks,
    sensitivity_matrix,
    solve_block_gn,
)
from .sparse import (
    CscMatrix,
    TripletMatrix,
    csc_from_triplets,
    read_matrix_market,
    spmv,
    spmv_transpose,
    stack_kkt_blocks,
    write_matrix_market,
)

__version__ = "0.1.0"
