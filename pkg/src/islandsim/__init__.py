"""Simulation and numerical analytics for interacting island diffusions."""

from .coefficients import (
    CoefficientSpec,
    CustomDiffusion,
    CustomDrift,
    DeclaredStructure,
    DomainInterval,
    LinearDiffusion,
    LinearDrift,
    Logistic,
    PiecewisePolynomial,
    PowerDiffusion,
    PowerDrift,
    SelectionMutation,
    ValidationReport,
    WrightFisher,
    eval_diffusion_sq,
    eval_drift,
    validate_assumptions,
)
from .exceptions import (
    ConfigError,
    DivergenceError,
    DomainError,
    IslandSimError,
    RegimeError,
    SolverError,
)
from .analytics import (
    QuadratureConfig,
    RhoSolution,
    classify_regime,
    extinction_criterion,
    extinction_probability,
    gamma_rho_cdf,
    gamma_rho_pdf,
    logistic_criterion,
    sample_gamma_rho,
    scale_density,
    scale_function,
    solve_rho,
    speed_mass,
)
from .sde import (
    ImmigrationProfile,
    MigrationMatrix,
    Path,
    TimeGrid,
    export_path_csv,
    sample_system_stats,
    simulate_level_system,
    simulate_loop_free,
    simulate_single,
    simulate_system,
    simulate_uniform_system,
    simulate_with_immigration,
    single_batch_stats,
)
from .virgin_island import (
    VirginIslandTree,
    build_tree,
    export_spectrum_csv,
    export_tree_csv,
    sample_excursion,
    sample_tree_stats,
    spectrum,
    total_mass,
)
from .mean_field import (
    ParticleEnsemble,
    duality_gap,
    export_ensemble_csv,
    simulate_mckean_vlasov,
)
from .experiments import (
    ExperimentConfig,
    ExperimentReport,
    ExpDecreasingConcave,
    MixedMonomial,
    SmoothedStep,
    run_analyze,
    run_comparison,
    run_convergence,
    run_duality,
    run_identity_suite,
    tent,
)
from .config import build_spec, load_config
from .cli import cli_main

__version__ = "0.1.0"
