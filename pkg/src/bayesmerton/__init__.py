"""Bayesian one-stock portfolio choice: filter, optimal fraction, asymptotics, simulation."""

from .model import (
    EmptySupport,
    InvalidAlpha,
    InvalidPrior,
    MarketModel,
    NonPositiveSigma,
    StrategyQuery,
    UnorderedDrifts,
    UtilitySpec,
    merton_fraction,
    new_market,
)
from .filtering import (
    FilterPath,
    Posterior,
    StepTooLarge,
    likelihood,
    log_likelihood,
    log_normalizer,
    normalizer,
    posterior,
    posterior_mean,
    simulate_filter_sde,
)
from .strategy import (
    DegenerateHorizon,
    McFraction,
    QuadratureConfig,
    QuadratureNotConverged,
    StabilizedMixture,
    StrategyValue,
    fk_profile,
    log_utility_fraction,
    mc_fraction,
    optimal_fraction,
    optimal_fraction_grid,
    stable_integrand_weights,
)
from .asymptotics import (
    HypothesisViolated,
    InvalidLambda,
    SweepResult,
    horizon_sweep,
    jensen_lower_bound_fd,
    limit_fraction,
    pessimist_lower_bound_f1,
)
from .simkit import (
    CachedStrategy,
    PathBundle,
    UtilityEstimate,
    build_feedback_strategy,
    estimate_utility,
    optimality_check,
    simulate_paths,
    terminal_wealth,
)

__all__ = [
    "EmptySupport",
    "InvalidAlpha",
    "InvalidPrior",
    "MarketModel",
    "NonPositiveSigma",
    "StrategyQuery",
    "UnorderedDrifts",
    "UtilitySpec",
    "merton_fraction",
    "new_market",
    "FilterPath",
    "Posterior",
    "StepTooLarge",
    "likelihood",
    "log_likelihood",
    "log_normalizer",
    "normalizer",
    "posterior",
    "posterior_mean",
    "simulate_filter_sde",
    "DegenerateHorizon",
    "McFraction",
    "QuadratureConfig",
    "QuadratureNotConverged",
    "StabilizedMixture",
    "StrategyValue",
    "fk_profile",
    "log_utility_fraction",
    "mc_fraction",
    "optimal_fraction",
    "optimal_fraction_grid",
    "stable_integrand_weights",
    "HypothesisViolated",
    "InvalidLambda",
    "SweepResult",
    "horizon_sweep",
    "jensen_lower_bound_fd",
    "limit_fraction",
    "pessimist_lower_bound_f1",
    "CachedStrategy",
    "PathBundle",
    "UtilityEstimate",
    "build_feedback_strategy",
    "estimate_utility",
    "optimality_check",
    "simulate_paths",
    "terminal_wealth",
]
