"""kinshell: deterministic phase-space solver and verification harness for a
damped kinetic transport equation with speed-preserving reorientation.
"""

__version__ = "0.1.0"

from .grid import (
    DistributionField,
    GridError,
    PhaseGrid,
    SpatialGrid,
    VelocityGrid,
    build_velocity_grid,
    load_snapshot,
    phase_integral,
    save_snapshot,
)
from .kernel import (
    AngularProfile,
    KernelError,
    ScatteringKernel,
    apply_Q2,
    build_kernel,
    collision_invariant_defect,
    forward_peaked,
    isotropic,
    reverse_mass_bound,
    self_similar_H,
)
from .moments import (
    MomentSet,
    compute_moments,
    energy_functional,
    interpolation_bound,
    moment_norm_bound,
)
from .dynamics import (
    DampingModel,
    Trajectory,
    advect,
    damping_constant,
    damping_linear,
    damping_rate,
    damping_saturating,
    damping_zero,
    run_splitting,
    trace_characteristic,
)
from .picard import (
    IterateTrace,
    PicardConfig,
    PicardNonConvergence,
    check_gronwall_trace,
    duhamel_apply,
    gronwall_envelope,
    run_picard,
)
from .verify import (
    EnergyLedger,
    Mollifier,
    commutation_defect,
    high_moment_cap,
    default_battery,
    energy_ledger,
    initial_data_limit,
    mollify,
    weak_form_residual,
)
