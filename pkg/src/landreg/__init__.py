"""Bayesian landmark image registration via stochastically perturbed
Hamiltonian landmark dynamics.

Public surface: kernel/Hamiltonian primitives, geodesic shooting and flows,
Langevin path sampling, linearised Gaussian path posteriors, operator-splitting
MAP estimators with Laplace covariances, and landmark-set averaging.
"""

__version__ = "0.1.0"

from .align import ProcrustesResult, procrustes_align
from .errors import (
    DegenerateCurvatureError,
    DegeneratePairError,
    IllConditionedObservationError,
    InconsistentCovarianceWarning,
    IntegrationDivergedError,
    InvalidParameterError,
    LandregError,
    MemoryBudgetError,
    NotConvergedWarning,
    OutOfRangeError,
    SingularKernelError,
)
from .flow import (
    DiscretePath,
    FlowSettings,
    ShootResult,
    flow,
    flow_endpoint,
    path_energy,
    push_forward,
    shoot_register,
    velocity_field,
)
from .io import LandmarkFile, RunConfig, load_landmarks, save_landmarks
from .kernel import (
    GaussianKernel,
    LandmarkConfig,
    PhaseState,
    ThermostatParams,
    gibbs_momentum_sample,
    grad_hamiltonian,
    hamiltonian,
    hamiltonian_state,
    hess_hamiltonian,
    kernel_matrix,
)
from .langevin import (
    MidpointPrior,
    em_step_backward,
    em_step_conserving,
    em_step_forward,
    ou_approx_variance,
    ou_exact,
    ou_moments,
    pushforward_ensemble,
    sample_midpoint_paths,
)
from .lingauss import (
    GaussianDist,
    LinearisedSystem,
    PathMoments,
    condition_on_endpoints,
    linearise_about,
    midpoint_init_dist,
    propagate_moments,
    sample_posterior_paths,
)
from .numerics import (
    cholesky,
    expm_sym,
    lbfgs_minimise,
    psd_project,
    rng_stream,
    spectral_decomp,
)
from .splitting import (
    FirstSplitMAP,
    MultiSetMAP,
    RegistrationData,
    SecondSplitMAP,
    average_marginal_sds,
    laplace_first,
    laplace_generic,
    laplace_multi,
    laplace_second,
    map_first,
    map_multi,
    map_second,
    matrix_exp_kernel,
    objective_first,
    objective_multi,
    objective_second,
)
