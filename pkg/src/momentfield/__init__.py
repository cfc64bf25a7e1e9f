"""Second moments and covariances of linear parabolic SPDEs with additive Q-Wiener noise.

The spatial operator is represented by its eigenvalues, so every quantity is
computed in the eigenbasis: deterministic two-time moment fields from the
tensorized moment equation, Monte Carlo estimates from exact path sampling,
and the random-data parabolic problem with its independence conditions.
"""

from .errors import (
    CapacityError,
    ConditionError,
    DegenerateSampleError,
    DomainError,
    MomentFieldError,
    PSDError,
    QuadratureError,
    ValidationError,
)
from .moment import (
    BoundaryReport,
    DeltaQReport,
    MomentField,
    ResidualReport,
    TensorDuhamel,
    XNormReport,
    boundary_residual,
    delta_q_membership,
    equal_time_psd,
    exchange_symmetric,
    gram_psd,
    solve_covariance,
    solve_mean,
    solve_second_moment,
    variational_residual,
    variational_residuals,
    xnorm_squared,
)
from .noise import (
    NoiseCovariance,
    NoiseFactor,
    convolution_increment_covariance,
    diagonal_profile,
    factor,
    hs_norm_squared,
    sample_increments,
    validate_covariance,
)
from .polynomial import TimePolynomial, product_integral
from .random_pde import (
    RandomDataModel,
    SecondMomentData,
    cross_term_estimate,
    kron_covariance,
    sample_random_solution,
    simulate_random_solutions,
    solve_random_covariance,
    solve_random_second_moment,
)
from .simulator import (
    EstimatorField,
    InitialLaw,
    MCCheck,
    PathEnsemble,
    initial_noise_correlation,
    isometry_check,
    isometry_checks,
    mc_covariance,
    mc_mean,
    mc_second_moment,
    pathwise_weak_residual,
    simulate_paths,
)
from .spectral import (
    SpectralOperator,
    TimeGrid,
    as_coefficients,
    make_dirichlet_laplacian,
    norm,
    semigroup_apply,
    smoothing_integral,
)

__version__ = "0.1.0"
