"""Mean-field interacting particle systems, their coupled limit dynamics,
derivative flows with respect to initial and noise perturbations, and a
Monte Carlo harness that fits empirical convergence rates against theory.
"""

from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    FitError,
    MfChaosError,
    ParameterError,
    UnsupportedModelError,
)
from .measures import (
    EmpiricalMeasure,
    MomentEstimate,
    empirical_moment,
    wasserstein_1d,
    wasserstein_assignment,
)
from .models import (
    Admissibility,
    ModelSpec,
    check_drift_gradient,
    check_lions_kernel,
    check_one_sided_bound,
    make_double_well,
    make_kuramoto,
    make_mf_ou,
    make_model,
)
from .noise import (
    NoiseBank,
    TimeGrid,
    coarsen_bank,
    derive_seed,
    extend_bank,
    make_noise_bank,
    sample_initials,
)
from .particle_sim import (
    FrozenLaw,
    LimitCloud,
    MetricsConfig,
    ParticleCloud,
    PathStats,
    collect_path_stats,
    run_reference,
    step_limit_copies,
    step_particles,
)

__version__ = "0.1.0"
