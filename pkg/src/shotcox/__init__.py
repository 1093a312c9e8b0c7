"""Dependent shot-noise Cox count processes.

Simulation, reversible-jump MCMC filtering, staged Monte Carlo EM
calibration, covariate detrending and prediction for multivariate count
panels whose latent intensities are coupled through a Clayton Levy copula.
"""

from .shotnoise import (
    JumpEvent,
    MarginalShotParams,
    Trajectory,
    integrated_intensity,
    intensity_at,
    sample_stationary_initial,
    simulate_trajectory,
    theoretical_cov,
)
from .dependence import (
    ClaytonDependence,
    ClaytonParam,
    Decomposition,
    MarginalTail,
    UnivariateExponentialSizes,
    clayton_value,
    common_jump_density,
    decompose_rates,
    joint_shot_log_density,
    sample_common_jump,
    unique_jump_density,
)
from .counts import (
    CountsPanel,
    ExposureSeries,
    exposure_weighted_mass,
    log_conditional,
    log_prior,
    masses_for_trajectory,
    poisson_count_logprob,
    simulate_counts,
)
from .filtering import FilterConfig, FilterResult, MoveProposal, run_filter, select_move
from .calibration import (
    EmConfig,
    FitResult,
    fit_copula,
    fit_marginal,
    merge_marginal_trajectories,
    moment_match_copula,
    moment_match_marginal,
)
from .exposure import (
    CalendarDesign,
    GlmFit,
    build_calendar_design,
    build_exposure,
    fit_poisson_glm,
    select_month_encoding,
)
from .diagnostics import (
    EmpiricalCopulaGrid,
    PredictionSet,
    ResidualSeries,
    acf,
    decompose_contributions,
    dependency_measures,
    empirical_copula,
    pearson_residuals,
    predict,
)
from .config import RunConfig, load_config, parse_config
from .pipeline import run_pipeline

__version__ = "0.1.0"
