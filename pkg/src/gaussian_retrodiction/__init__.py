"""Forward filtering, backward smoothing and retrodiction for monitored Gaussian oscillators."""

from .backward import (
    BackwardTrajectory,
    final_condition_identity,
    final_condition_projection,
    integrate_backward,
    to_covariance_form,
    to_information_form,
)
from .errors import (
    DegenerateDistributionError,
    InputError,
    IntegrationInstabilityError,
    SingularFormError,
    StepSizeError,
    TruncationError,
)
from .forward import ForwardTrajectory, MeasurementRecord, filter_record, integrate_covariance, simulate_record
from .model import (
    DerivedMatrices,
    ModelSpec,
    damping_channel,
    derive_matrices,
    dispersive_channel,
    heterodyne_split,
    oscillator_hamiltonian,
    rotated_channel,
)
from .phase_core import (
    CovarianceEffect,
    GaussianMoments,
    InformationEffect,
    QuadratureLayout,
    build_symplectic,
    check_physical,
    marginal_variance,
    quadrature_marginals,
)
from .retrodiction import PastDistribution, gaussian_overlap, past_path, past_quadrature, uncertainty_sweep

__version__ = "0.1.0"
