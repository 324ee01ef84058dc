"""Accelerated probabilistic state estimation for distribution feeders.

Weighted-least-squares state estimation over many sampled measurement
profiles: a reduced model of the exact Cartesian quadratic residual is tried
first, checked against the full model, and a Gauss-Newton/QR solve takes over
when the check fails. Converged fallback solutions grow the reduced basis.
"""

from .errors import (
    ApseError,
    ConditioningError,
    DegenerateBasisError,
    DegenerateStateError,
    DimensionError,
    InfeasibleSampleError,
    MalformedGraphError,
    MeasurementError,
    ObservabilityError,
)
from .grid import (
    AdmittanceModel,
    CartesianState,
    Feeder,
    NetworkGraph,
    PolarState,
    build_incidence,
    build_ybus,
    cartesian_to_polar,
    load_feeder,
    polar_to_cartesian,
    save_feeder,
)
from .measurements import (
    CovarianceModel,
    MeasurementProfile,
    MeasurementSet,
    assemble_residual,
    load_layout,
    squared_magnitude_transform,
    validate_redundancy,
)
from .physics import (
    HessianTensor,
    JacobianBlocks,
    PhysicsModel,
    QuadraticResidualModel,
    build_quadratic_model,
    quadratic_residual,
)
from .solver import SolverConfig, SolveReport, gain_matrix_step, gnvqr_solve, step_converged
from .rom import ReducedOperators, Subspace, dse_update, init_subspace, lift, reduce_profile, rmse_solve
from .estimator import Apse, ApseConfig, ApseResult, RecycledFactors, accept_test, apse_run, prefactor
from .uq import (
    RunStatistics,
    SampleBatch,
    UncertaintyRegion,
    run_batch,
    solve_power_flow,
    summarize,
    synthesize_profiles,
)
from .feeders import full_layout, ieee33, sparse_layout

__version__ = "0.1.0"
