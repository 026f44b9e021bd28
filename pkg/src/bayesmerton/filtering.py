"""Closed-form Bayesian drift filter and an Euler simulator of its SDE.

The posterior over the drift support given the observable process
``Y_t = W_t + gamma_theta * t`` is available in closed form through the
likelihood weights

    L_t(mu_k, y) = exp(gamma_k * y - gamma_k^2 * t / 2)     (t > 0; 1 at t = 0)

and their prior mixture ``F(t, y) = sum_k p_k L_t(mu_k, y)``.  All products
are carried in the log domain: the exponents scale like ``gamma^2 T / 2`` and
overflow doubles beyond ``T ~ 1400 / gamma^2`` otherwise.

The same posterior solves a diffusion driven by the innovation process,

    dp_k(t) = (mu_k - mu_hat_t) p_k(t) / sigma dW_hat_t,

which :func:`simulate_filter_sde` integrates with an Euler scheme as a
pathwise cross-check of the closed form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO

import numpy as np

from .model import MarketModel


class StepTooLarge(RuntimeError):
    """Euler step left the posterior far outside the simplex; reduce the step."""


#: Pre-clip posterior coordinates outside this window signal instability.
_EULER_GUARD = (-0.1, 1.1)

#: Clipping floor applied after every Euler step, then renormalized; the SDE
#: preserves the simplex only in exact arithmetic.
_EULER_FLOOR = 1e-12


@dataclass(frozen=True)
class Posterior:
    """Posterior drift distribution at time t: probs[k] = P(theta = mu_k | Y_t)."""

    t: float
    probs: np.ndarray


@dataclass(frozen=True)
class FilterPath:
    """One Euler trajectory of the posterior SDE plus its driving Y path."""

    times: np.ndarray
    probs: np.ndarray  # (n_steps + 1, d)
    y: np.ndarray  # (n_steps + 1,)
    true_drift_index: int
    step: float
    seed: int


def _log_likelihoods(model: MarketModel, t: float, y) -> np.ndarray:
    """Exponents gamma_k * y - gamma_k^2 t / 2, broadcast over y; zeros at t = 0."""
    y_arr = np.asarray(y, dtype=float)
    if t == 0.0:
        return np.zeros(y_arr.shape + (model.d,))
    gam = model.gammas
    return y_arr[..., None] * gam - 0.5 * gam * gam * t


def log_likelihood(model: MarketModel, k: int, t: float, y: float) -> float:
    """Log of L_t(mu_k, y); exactly 0 at t = 0."""
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t == 0.0:
        return 0.0
    gam = model.gammas[k]
    return gam * y - 0.5 * gam * gam * t


def likelihood(model: MarketModel, k: int, t: float, y: float) -> float:
    """Likelihood weight L_t(mu_k, y) of drift state k."""
    return float(np.exp(log_likelihood(model, k, t, y)))


def log_normalizer(model: MarketModel, t: float, y) -> np.ndarray | float:
    """log F(t, y) = logsumexp_k(log p_k + log L_t(mu_k, y)), max-shifted."""
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    terms = np.log(model.prior) + _log_likelihoods(model, t, y)
    shift = terms.max(axis=-1, keepdims=True)
    out = shift[..., 0] + np.log(np.exp(terms - shift).sum(axis=-1))
    return float(out) if out.ndim == 0 else out


def normalizer(model: MarketModel, t: float, y: float) -> float:
    """Prior likelihood mixture F(t, y) = sum_k p_k L_t(mu_k, y)."""
    return float(np.exp(log_normalizer(model, t, y)))


def posterior(model: MarketModel, t: float, y: float) -> Posterior:
    """Closed-form posterior: probs[k] proportional to p_k L_t(mu_k, y)."""
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t == 0.0:
        return Posterior(t=0.0, probs=model.prior)
    terms = np.log(model.prior) + _log_likelihoods(model, t, float(y))
    terms -= terms.max()
    probs = np.exp(terms)
    probs /= probs.sum()
    return Posterior(t=t, probs=probs)


def posterior_mean(model: MarketModel, t: float, y: float) -> float:
    """Conditional drift estimate mu_hat = sum_k mu_k p_k(t); in [mu_1, mu_d]."""
    return float(posterior(model, t, y).probs @ model.mus)


def simulate_filter_sde(
    model: MarketModel,
    true_drift_index: int,
    horizon: float,
    step: float,
    seed: int,
) -> FilterPath:
    """Euler scheme for the posterior SDE along one simulated true path.

    The true Brownian path and the innovation increments come from a single
    RNG stream (all Brownian increments drawn upfront, in time order) so
    paired comparisons are reproducible from the seed alone.  Each Euler step
    is clipped to [1e-12, 1] and renormalized.

    Returns the posterior trajectory together with the driving ``Y`` path, so
    the closed form :func:`posterior` is evaluable at matching times.

    Raises
    ------
    StepTooLarge
        If any pre-clip posterior coordinate leaves [-0.1, 1.1].
    """
    if step <= 0.0 or horizon <= 0.0:
        raise ValueError("step and horizon must be positive")
    if not 0 <= true_drift_index < model.d:
        raise IndexError(f"true_drift_index {true_drift_index} out of range")
    n_steps = max(1, int(round(horizon / step)))
    rng = np.random.default_rng(seed)
    dw = rng.standard_normal(n_steps) * np.sqrt(step)

    d = model.d
    mus = model.mus
    sigma = model.sigma
    gamma_true = model.gammas[true_drift_index]
    mu_true = mus[true_drift_index]

    probs = np.empty((n_steps + 1, d))
    y = np.empty(n_steps + 1)
    probs[0] = model.prior
    y[0] = 0.0
    p = model.prior.copy()
    lo, hi = _EULER_GUARD
    for i in range(n_steps):
        mu_hat = float(p @ mus)
        dw_hat = dw[i] + (mu_true - mu_hat) / sigma * step
        p = p + p * (mus - mu_hat) / sigma * dw_hat
        if p.min() < lo or p.max() > hi:
            raise StepTooLarge(
                f"posterior left {_EULER_GUARD} at step {i}; reduce step {step}"
            )
        np.clip(p, _EULER_FLOOR, 1.0, out=p)
        p /= p.sum()
        probs[i + 1] = p
        y[i + 1] = y[i] + dw[i] + gamma_true * step
    times = np.arange(n_steps + 1) * step
    return FilterPath(
        times=times,
        probs=probs,
        y=y,
        true_drift_index=int(true_drift_index),
        step=step,
        seed=int(seed),
    )


def export_trajectory_csv(model: MarketModel, path: FilterPath, stream: IO[str]) -> None:
    """Write a trajectory as CSV: time, y, p_1..p_d, posterior_mean."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(
        ["time", "y"] + [f"p_{k + 1}" for k in range(model.d)] + ["posterior_mean"]
    )
    for i in range(path.times.size):
        mean = float(path.probs[i] @ model.mus)
        writer.writerow(
            [repr(float(path.times[i])), repr(float(path.y[i]))]
            + [repr(float(v)) for v in path.probs[i]]
            + [repr(mean)]
        )
