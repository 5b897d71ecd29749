"""Robust bang-bang control: redundant needle switchings, end-point
differentials, and minimal-norm switching-time tracking, instantiated on
3D rigid-body attitude dynamics."""

from ._kernels import BACKEND, HAVE_COMPILED
from .control import (
    BangBangControl,
    ChannelBounds,
    GapPolicy,
    SwitchingEvent,
    apply_shift,
    insert_needle,
    validate_gaps,
    value_at,
)
from .correction import (
    CorrectionReport,
    SvdSolver,
    TrackingConfig,
    compute_correction,
    min_norm_solve,
    sigma_min,
    track,
    uniform_checkpoints,
)
from .dynamics import (
    DynamicsModel,
    PerturbationSpec,
    PerturbedRigidBodyModel,
    RigidBodyModel,
    RigidBodyParams,
    perturbed_rhs,
    rigid_body_jacobian,
    rigid_body_rhs,
)
from .endpoint import (
    EndpointDifferential,
    backward_endpoint,
    backward_sweep,
    d_backward_endpoint,
    d_endpoint,
    endpoint,
    variation_vector,
)
from .errors import (
    AllSingularValuesZero,
    BangtrackError,
    ConfigError,
    IntegrationBlowup,
    NoFeasibleNominal,
    NoFreedomLeft,
    NotConverged,
    OrderViolation,
)
from .propagation import IntegratorConfig, Trajectory, propagate, propagate_backward
from .robustness import (
    CostWeights,
    NeedlePlan,
    NlpSettings,
    NominalStructure,
    RobustifyResult,
    RobustnessGrid,
    derive_nominal,
    enumerate_needle_channels,
    epsilon_max,
    l1_time_cost,
    place_needles,
    project_gap_simplex,
    robustness_cost,
    sigma_min_profile,
    solve_timing_nlp,
)

__version__ = "0.1.0"
