"""Branching trait dynamics: simulation and closed-form analytics.

Cells carry a nonnegative trait that drifts, diffuses and jumps; cells
divide (splitting the trait by a sharing kernel) and die. The package
simulates single traits, whole populations and the size-biased spine
construction, and evaluates the matching closed-form growth rates, regime
classifications and moment formulas so the two routes can be checked
against each other.
"""

from .kernels import (
    DiracHalfKernel,
    SharingKernel,
    TableKernel,
    TwoPointKernel,
    UniformKernel,
)
from .model import (
    AffineFn,
    CellPolicy,
    ConstantFn,
    ExponentialJumps,
    FixedJumps,
    JumpMeasure,
    LinearFn,
    ModelSpec,
    ParasiteLaw,
    PowerFn,
    PowerSumFn,
    StableJumps,
    UniformJumps,
    ZeroFn,
    constant_rates,
    general_policy,
    linear_division,
    validate_eu,
)

__version__ = "0.1.0"

from .analytics import (  # noqa: E402
    GROWS,
    GROWS_SLOW,
    MEAN_TO_ZERO,
    UNDETERMINED,
    RegimeMap,
    check_expl_ext,
    classify_mean_cells,
    equal_sharing_threshold,
    ga,
    kappa_hat,
    malthus_drift,
    mean_cells_rate,
    mean_population,
    regime_map,
    second_moment_population,
    tau_hat,
    total_trait_mean,
    uniform_sharing_threshold,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config  # noqa: E402
from .dynamics import (  # noqa: E402
    TraitBatch,
    advance_traits,
    simulate_trait,
    simulate_trait_batch,
)
from .montecarlo import (  # noqa: E402
    Estimator,
    SeedPlan,
    equivalence_test,
    map_blocks,
    replicate,
    trend_test,
)
from .population import (  # noqa: E402
    PopulationState,
    new_population,
    run_population,
    run_population_exact,
    simulate_population_runs,
    step_population,
)
from .spine import (  # noqa: E402
    simulate_spine_homogeneous,
    simulate_spine_homogeneous_batch,
    simulate_spine_inhomogeneous,
    simulate_spine_inhomogeneous_batch,
)
