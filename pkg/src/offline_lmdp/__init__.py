"""Primal-dual offline reinforcement learning in linear MDPs and CMDPs."""

from .data import (
    BehaviorDistribution,
    CoverageError,
    GramMatrix,
    OfflineDataset,
    concentrability,
    gram_matrix,
    in_span,
    occupancy_ratio_bound,
    sample_dataset,
)
from .estimators import ValueAtStates, phi_mu_hat, psi_v_hat, v_values
from .model import (
    ConstrainedOptimum,
    ExactEval,
    InfeasibleError,
    LinearCmdp,
    TabularPolicy,
    build_random_cmdp,
    exact_eval,
    lagrangian_f,
    lagrangian_g,
    lagrangian_value,
    optimal_constrained,
    optimal_unconstrained,
    transition_matrix,
)
from .bench import ExperimentSpec, ReportRow, UsageError, report, run_experiment
from .players import (
    PlayerBounds,
    SoftmaxPolicy,
    oco_step,
    pi_update,
    simplex_vertex_argmin,
    softmax_at,
    w_greedy,
    zeta_greedy,
)
from .solver import (
    KnownModel,
    MixturePolicy,
    PrimalDualSolver,
    RunTrace,
    SolverConfig,
    SolverDivergenceError,
    evaluate_mixture,
    solve,
)
from .spanner import CoefLambda, DegenerateFeaturesError, Spanner, compute_spanner, convert_coeffs, lambda_of

__version__ = "0.1.0"
