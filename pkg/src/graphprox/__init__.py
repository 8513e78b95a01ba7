"""Decentralized multitask learning over graphs with non-smooth co-regularization."""

__version__ = "0.1.0"

from .costs import (  # noqa: E402
    AgentModel,
    ModelEnsemble,
    SampleStreams,
    custom_models,
    generate_smooth_models,
    generate_sparse_models,
)
from .metrics import LearningCurve, msd_curve, msd_loc_curve, prediction_error, steady_state_db  # noqa: E402
from .prox import (  # noqa: E402
    ProxProblem,
    ProxResult,
    Regularizer,
    brute_force_prox_oracle,
    prox_elastic_net_sum,
    prox_l0_sum,
    prox_l1_sum,
    prox_social_step,
    reweight_coefficients,
)
from .solver import (  # noqa: E402
    SolverConfig,
    StabilityConstants,
    Trajectory,
    run_decentralized,
    simulate_curves,
    solve_reference,
    theorem_bound_recursion,
)
from .topology import Network, build_network, knn_network, ring_network  # noqa: E402
