"""Ergodic averaging of diffusion tensors along divergence-free flows.

The library computes characteristic flows and their Jacobians, the
push-forward action of a flow on matrix fields, long-time (ergodic)
averages of diffusion tensors, zero-mean correctors, and finite-difference
solutions of the associated stiff, filtered and averaged parabolic
problems, together with the convergence experiments that tie them
together.
"""

__version__ = "0.1.0"

from .errors import (
    CapabilityError,
    ConfigurationError,
    DegenerateFitError,
    DimensionMismatchError,
    ErgodiffError,
    IntegrationFailureError,
    InvalidParameterError,
    OutOfDomainError,
    SolverError,
    UnsupportedModeError,
    WeightMatrixError,
)
from .fields import (
    FrameSpec,
    VectorFieldSpec,
    field_from_config,
    gyrokinetic_field,
    lie_bracket_vectors,
    rotation_field,
    rotation_frame,
    rotation_weights,
)
from .flow import FlowIntegratorConfig, FlowResult, default_integrator, flow_advance, flow_group_check
from .transport import (
    MatrixFieldFn,
    WeightedQuadrature,
    box_quadrature,
    constant_matrix_field,
    generator_residual,
    group_apply,
    identity_matrix_field,
    lie_bracket_matrix,
    random_polynomial_field,
    weighted_l2_norm,
    weighted_sup_norm,
    weighted_vector_norm,
)
from .averaging import (
    AverageResult,
    CorrectorResult,
    average_properties_check,
    corrector_solve,
    ergodic_average,
    gyro_average_closed_form,
    rotation_average_closed_form,
)
from .pde import (  # noqa: E402
    Grid,
    GridFunction,
    SolveResult,
    gaussian_on_grid,
    pull_back,
    solve_filtered,
    solve_limit,
    solve_stiff,
)
from .lab import (  # noqa: E402
    ConvergenceReport,
    PairingReport,
    convergence_study,
    corrector_evaluate,
    frame_gradient,
    rate_fit,
    two_scale_pairing,
)
