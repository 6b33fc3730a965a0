"""State estimation for linear systems driven by Gaussian-mixture noise.

The library provides a Gaussian sum filter with per-step collapse, the
max-weight readout variant, the mode-oracle filter, and the moment-matched
Kalman filter, together with analytic lower/upper bounds on the collapsed
estimator's mean squared error and a Monte Carlo experiment harness. Hot
loops run through an optional compiled kernel; a pure NumPy path is always
available (see `gmkf._backend.resolve_backend`).
"""

from ._backend import RunResult, available_backends, resolve_backend, simulate_run
from .bounds import (
    BoundsRecord,
    combined_upper_bound,
    evaluate_bounds,
    gsf_r_upper_bound,
    gsf_r_upper_bound_mc,
    lmmse_upper_bound,
    lower_bound,
    regions_1d,
    trace_m1_m2,
    trace_m3_mc,
    truncated_moments_1d,
    unconditional_mse_mc,
)
from .exceptions import ConfigError, NumericsError
from .filters import (
    FilterState,
    GsfOutput,
    ModeBank,
    SystemModel,
    gsf_r_step,
    gsf_step,
    lmmse_step,
    matched_step,
    mode_matched_step,
    symmetrize_floor,
)
from .harness import (
    SweepReport,
    SweepRow,
    Trajectory,
    generate_trajectory,
    run_experiment,
    sweep,
)
from .mixtures import (
    GaussianComponent,
    GaussianMixture,
    kl_vs_moment_matched,
    kl_vs_moment_matched_mc,
    log_density,
    mahalanobis,
    moment_match,
    sample,
)
from .scenarios import (
    DEFAULT_C_GRID,
    DEFAULT_DT,
    MODEL_TABLE,
    ScenarioConfig,
    build_system,
    load_scenario,
    scalar_mixture,
)

__version__ = "0.1.0"

__all__ = [
    "BoundsRecord",
    "ConfigError",
    "DEFAULT_C_GRID",
    "DEFAULT_DT",
    "FilterState",
    "GaussianComponent",
    "GaussianMixture",
    "GsfOutput",
    "MODEL_TABLE",
    "ModeBank",
    "NumericsError",
    "RunResult",
    "ScenarioConfig",
    "SweepReport",
    "SweepRow",
    "SystemModel",
    "Trajectory",
    "available_backends",
    "build_system",
    "combined_upper_bound",
    "evaluate_bounds",
    "generate_trajectory",
    "gsf_r_step",
    "gsf_r_upper_bound",
    "gsf_r_upper_bound_mc",
    "gsf_step",
    "kl_vs_moment_matched",
    "kl_vs_moment_matched_mc",
    "lmmse_step",
    "lmmse_upper_bound",
    "load_scenario",
    "log_density",
    "lower_bound",
    "mahalanobis",
    "matched_step",
    "mode_matched_step",
    "moment_match",
    "regions_1d",
    "resolve_backend",
    "run_experiment",
    "sample",
    "scalar_mixture",
    "simulate_run",
    "sweep",
    "symmetrize_floor",
    "trace_m1_m2",
    "trace_m3_mc",
    "truncated_moments_1d",
    "unconditional_mse_mc",
    "__version__",
]
