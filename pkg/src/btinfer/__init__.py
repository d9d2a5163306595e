"""Balanced truncation for Bayesian inference of LTI initial conditions."""

from ._version import __version__
from .bench import gen_heat, load_system, export_system, read_matrix_market, write_matrix_market
from .estimators import BalancedTruncationPosterior, FullPosterior, OptimalLowRankPosterior
from .exceptions import (
    BTInferError,
    ConfigError,
    EmptyMeasurementsError,
    IncompatiblePriorError,
    IndefiniteMatrixError,
    InvalidInputError,
    MatrixMarketError,
    OverTruncationError,
    SingularPriorError,
    UnstableSystemError,
)
from .experiment import ExperimentConfig, calibrate_noise, run_experiment
from .inference import (
    MeasurementSet,
    ObservationSchedule,
    Posterior,
    adjoint_data,
    fisher_information,
    full_posterior,
    posterior_covariance,
    sample_schedule,
    simulate_measurements,
)
from .linalg import (
    GramianFactor,
    cholesky_factor,
    mat_exp,
    solve_lyapunov,
    solve_lyapunov_factored,
    spectral_abscissa,
    sym_def_geig,
)
from .lti import (
    LtiSystem,
    build_forward_map,
    noisy_observability_gramian,
    reachability_gramian,
    time_limited_fisher_gramian,
)
from .optimal import (
    PencilDecomposition,
    forstner_distance,
    olr_mean,
    olru_covariance,
    olru_mean,
    olru_optimal_distance,
    projected_forward_quantities,
    spantini_eigenpairs,
)
from .prior import CompatiblePrior, check_compatibility, make_compatible, spin_up_prior
from .reduction import (
    BalancedReduction,
    balance_square_root,
    bt_fisher_information,
    bt_h_reduce,
    bt_posterior,
    bt_q_reduce,
    project,
    qm_bt,
)
