"""Smoothed-particle relativistic Vlasov-Darwin simulator in generalized variables."""
from ._accel import backend, set_threads
from .darwin_kernels import (
    InvalidExponentsError,
    KernelConfig,
    SingularPairError,
    VectorSource,
    darwin_kernel_sum,
    equivalent_vector_potential,
    pallard_bound,
    pallard_constant,
    scalar_kernel_sum,
    transversal_projection,
)
from .diagnostics import (
    SERIES_COLUMNS,
    RunRecord,
    decay_fit,
    deposit_grid,
    energy,
    norms_and_residuals,
    potential_bound_check,
    transversal_l2,
)
from .dynamics import characteristic_rhs, flow_jacobians, hamiltonian, step, velocity_jet
from .field_solver import (
    FieldNonConvergenceError,
    FieldSample,
    ProbeSet,
    SelfField,
    em_fields_from_potentials,
    eval_fields,
    solve_self_consistent_A,
)
from .grid import Grid3
from .phase_space import BumpDatum, Ensemble, InvalidDatumError, Marker, datum_norms, sample_bump, support_radii
from .simulation import RunConfig, fs_monitor, lifespan_bound, run_picard, run_simulation

__version__ = "0.1.0"
