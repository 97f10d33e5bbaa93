"""Exact Fisher information of finite-order correlated processes and Ising-chain thermometry."""

from .errors import (
    BoundaryTheta,
    DecompositionError,
    FimError,
    Indeterminate,
    NonErgodic,
    NumericError,
    OverflowRisk,
    SizeOverflow,
    ValidationError,
)
from .estimators import EstimationRun, mle, run_mse_experiment, sliding_window_stats, uncorrelated_mle
from .fisher import (
    ANALYTIC,
    CENTRAL,
    DerivativeScheme,
    FisherMatrix,
    FisherReport,
    conditional_fisher,
    gaussian_pair_fisher,
    joint_fisher,
    markov_decomposition,
    sample_mean_fisher,
    xi_ratio,
)
from .process import (
    FiniteMarkovModel,
    builtin_model,
    entropy_report,
    load_model,
    stationary_distribution,
    verify_markov_order,
    window_distribution,
)
from .sampling import DEFAULT_SEED, GaussianMarkovModel, Trajectory, sample_finite, sample_gaussian
from .spinchain import (
    SpinChainModel,
    ThermometryReport,
    build_transfer_matrix,
    marginal,
    scan_maps,
    specific_heat,
    thermal_fisher,
    thermometry_report,
    verify_chain_markov_order,
    zero_derivative_curve,
)

__version__ = "0.1.0"
