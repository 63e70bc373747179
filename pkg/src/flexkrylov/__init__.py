"""Flexible Krylov regularization: fast flexible LSQR, flexible LSQR and flexible CGLS."""

from .bidiag import AlreadyConverged, Breakdown, FastFGKState, FGKState, fafgk_init, fafgk_step, fgk_init, fgk_step
from .diagnostics import (
    DiagnosticSeries,
    basis_rank_diff,
    factorization_residual,
    orthogonality_loss_u,
    relative_error_series,
    speedup_tau,
    sv_compare,
    triangularity_loss,
)
from .operators import ConvolutionOperator, DenseOperator, LinearOperator, SparseOperator, check_adjoint, identity
from .preconditioning import (
    DiagonalScaling,
    FlexiblePreconditioner,
    identity_preconditioner,
    magnitude_preconditioner,
    power_sequence,
    sequence_preconditioner,
)
from .problems import ProblemInstance, add_noise, blur2d, heat_like, random_dense, random_sparse
from .projected import GivensQRState, ProjectedProblem, discrepancy_lambda, tikhonov_solve
from .solvers import (
    IterationHistory,
    SolverOptions,
    eta_coefficients,
    faflsqr,
    fcgls,
    flsqr,
    lsqr_baseline,
    run_hybrid,
    run_solver,
)

__version__ = "0.1.0"
