"""Optimal feedback fraction for the Bayesian power-utility investor.

The optimal fraction is a ratio of two Gaussian expectations,

    u*(t, T, y) = v*(t, T, y) / (sigma (1 - alpha)),
    v*          = E[F(T, y + W)^(a/(1-a)) sum_k p_k gamma_k L_T(mu_k, y + W)]
                  / E[F(T, y + W)^(1/(1-a))],        W ~ N(0, T - t),

and decomposes as v* = sum_k gamma_k f_k with f a probability vector over
drift states.  Evaluated naively, the integrands overflow doubles once
``gamma^2 T`` is a few hundred.  The engine therefore rewrites both
integrands in the scaled coordinate z = x / sqrt(T - t), where they become
powers of a normal mixture:

    F(T, y + z sqrt(T-t))^(1/(1-a)) phi_1(z)
        = (sum_k q_k(T) phi_k(z))^(1/(1-a)) / sqrt(2 pi),

with component densities phi_k = Normal(gamma_k sqrt(T-t) / (1-a), 1/(1-a))
and weights q_k(T) = p_k exp(gamma_k^2 (T a - t) / (2 (1-a)) + gamma_k y)
(up to a common constant that cancels in the ratio).  Raised to the power
1/(1-a), each component decays like a unit-variance Gaussian around its
mean, for every alpha < 1.  Quadrature therefore runs on per-component
panels of configurable half-width around those means, clipped at midpoints
between neighbours, with Gauss-Legendre nodes per panel and log-sum-exp
accumulation throughout, so no intermediate quantity leaves double range
even for horizons of 10^4 and |gamma| of 10.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import posterior, posterior_mean
from .model import InvalidAlpha, MarketModel, StrategyQuery, UtilitySpec

_LOG_2PI = float(np.log(2.0 * np.pi))

#: Node-doubling ceiling per panel; reaching it without two successive
#: evaluations agreeing raises QuadratureNotConverged.
NODE_CAP = 1024

#: Chunk size (y-points x nodes x states) for vectorized grid evaluation.
_GRID_CHUNK_ENTRIES = 2_000_000

_leggauss_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


class DegenerateHorizon(ValueError):
    """t = T has no stabilized mixture; use the maturity closed form."""


class QuadratureNotConverged(RuntimeError):
    """Successive node doublings kept moving u_star by more than rel_tol."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Gaussian-integral engine settings.

    ``nodes`` is the per-panel Gauss-Legendre order the doubling loop starts
    from, ``half_width`` the panel half-width in effective standard
    deviations, ``rel_tol`` the agreement target between successive node
    doublings.
    """

    nodes: int = 64
    half_width: float = 10.0
    rel_tol: float = 1e-9

    def __post_init__(self) -> None:
        if self.nodes < 8:
            raise ValueError(f"nodes must be >= 8, got {self.nodes}")
        if not self.rel_tol > 0.0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if not self.half_width > 0.0:
            raise ValueError(f"half_width must be > 0, got {self.half_width}")


@dataclass(frozen=True)
class StabilizedMixture:
    """Normalized log-weights and component parameters of the z-coordinate mixture."""

    log_weights: np.ndarray  # (d,), normalized: logsumexp == 0
    means: np.ndarray  # (d,), gamma_k sqrt(T-t) / (1-alpha)
    variance: float  # 1 / (1-alpha), shared by all components


@dataclass(frozen=True)
class StrategyValue:
    """Optimal fraction with its drift-state decomposition.

    ``u_star = v_star / (sigma (1-alpha))``, ``v_star = sum_k gamma_k f[k]``
    with f a probability vector; ``hedging = u_star - myopic`` where myopic
    is the posterior-mean Merton term.
    """

    u_star: float
    v_star: float
    f: np.ndarray
    myopic: float
    hedging: float


@dataclass(frozen=True)
class McFraction:
    """Monte Carlo estimate of u_star with a delta-method standard error."""

    estimate: float
    std_error: float
    n_samples: int


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp along one axis."""
    shift = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(shift, axis=axis) + np.log(
        np.sum(np.exp(a - shift), axis=axis)
    )


def _power_check(alpha: float) -> UtilitySpec:
    util = UtilitySpec(alpha)
    if util.is_log:
        raise InvalidAlpha("alpha = 0 is the logarithmic case; use log_utility_fraction")
    return util


def stable_integrand_weights(
    model: MarketModel, alpha: float, t: float, T: float, y: float
) -> StabilizedMixture:
    """Mixture weights and component parameters of the stabilized integrands.

    Log-weights are normalized by max-shift; the common constant dropped in
    the normalization cancels in every ratio the weights feed into.

    Raises
    ------
    DegenerateHorizon
        If t = T; the caller must use the maturity closed form instead.
    """
    _power_check(alpha)
    if t == T:
        raise DegenerateHorizon("t = T: use the posterior-mean Merton closed form")
    if not 0.0 <= t < T:
        raise ValueError(f"need 0 <= t < T, got t={t}, T={T}")
    one_minus = 1.0 - alpha
    gam = model.gammas
    s = np.sqrt(T - t)
    log_q = np.log(model.prior) + 0.5 * gam * gam * (T * alpha - t) / one_minus + gam * y
    log_w = log_q - _lse(log_q, axis=-1)
    means = gam * s / one_minus
    for arr in (log_w, means):
        arr.setflags(write=False)
    return StabilizedMixture(log_weights=log_w, means=means, variance=1.0 / one_minus)


def _legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    rule = _leggauss_cache.get(n)
    if rule is None:
        rule = np.polynomial.legendre.leggauss(n)
        _leggauss_cache[n] = rule
    return rule


def _panel_nodes(
    means: np.ndarray, half_width: float, n_nodes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and log-weights on midpoint-clipped panels.

    One window of the given half-width per mixture mean, clipped at the
    midpoint towards each neighbour so panels never overlap; the omitted
    inter-panel gaps only ever hold integrand mass below exp(-half_width^2/2)
    of the peak.
    """
    x, w = _legendre_rule(n_nodes)
    d = means.size
    zs = []
    lws = []
    for k in range(d):
        a = means[k] - half_width
        b = means[k] + half_width
        if k > 0:
            a = max(a, 0.5 * (means[k - 1] + means[k]))
        if k < d - 1:
            b = min(b, 0.5 * (means[k] + means[k + 1]))
        if b <= a:
            continue
        half = 0.5 * (b - a)
        zs.append(half * x + 0.5 * (a + b))
        lws.append(np.log(half * w))
    return np.concatenate(zs), np.concatenate(lws)


def _fk_at_nodes(
    model: MarketModel,
    alpha: float,
    t: float,
    T: float,
    y: np.ndarray,
    z: np.ndarray,
    log_w: np.ndarray,
) -> np.ndarray:
    """f_k for each y on the given nodes; shape (len(y), d).

    All sums of positive terms (mixture, posterior weights, node totals) run
    as log-sum-exp; f_k leaves the log domain only at the very end.
    """
    one_minus = 1.0 - alpha
    gam = model.gammas
    s = np.sqrt(T - t)
    log_prior = np.log(model.prior)

    log_q = log_prior + 0.5 * gam * gam * (T * alpha - t) / one_minus + gam * y[:, None]
    log_phat = log_q - _lse(log_q, axis=-1)[:, None]  # (ny, d)

    means = gam * s / one_minus
    log_phi = 0.5 * (np.log(one_minus) - _LOG_2PI) - 0.5 * one_minus * (
        z[:, None] - means
    ) ** 2  # (K, d)

    # log of the stabilized integrand: (mixture)^(1/(1-alpha))
    log_int = _lse(log_phat[:, None, :] + log_phi[None, :, :], axis=-1) / one_minus

    # posterior state weights g_k at the shifted observation y + z sqrt(T-t)
    log_lik = (
        log_prior
        + gam * (y[:, None, None] + z[None, :, None] * s)
        - 0.5 * gam * gam * T
    )  # (ny, K, d)
    log_g = log_lik - _lse(log_lik, axis=-1)[:, :, None]

    node_terms = log_w[None, :] + log_int  # (ny, K)
    log_den = _lse(node_terms, axis=-1)  # (ny,)
    log_num = _lse(node_terms[:, :, None] + log_g, axis=1)  # (ny, d)
    return np.exp(log_num - log_den[:, None])


def _fk_grid_once(
    model: MarketModel,
    alpha: float,
    t: float,
    T: float,
    y: np.ndarray,
    n_nodes: int,
    half_width: float,
) -> np.ndarray:
    """Single-level quadrature of f over a y-grid, chunked for memory."""
    one_minus = 1.0 - alpha
    means = model.gammas * np.sqrt(T - t) / one_minus
    z, log_w = _panel_nodes(means, half_width, n_nodes)
    chunk = max(1, _GRID_CHUNK_ENTRIES // (z.size * model.d))
    out = np.empty((y.size, model.d))
    for lo in range(0, y.size, chunk):
        hi = min(lo + chunk, y.size)
        out[lo:hi] = _fk_at_nodes(model, alpha, t, T, y[lo:hi], z, log_w)
    return out


def _maturity_value(model: MarketModel, alpha: float, t: float, y: float) -> StrategyValue:
    """Closed form at t = T (and for d = 1): posterior-mean Merton ratio."""
    one_minus = 1.0 - alpha
    probs = posterior(model, t, y).probs
    v = float(probs @ model.gammas)
    u = v / (model.sigma * one_minus)
    return StrategyValue(u_star=u, v_star=v, f=probs, myopic=u, hedging=0.0)


def optimal_fraction(
    model: MarketModel,
    alpha: float,
    query: StrategyQuery,
    quad: QuadratureConfig = QuadratureConfig(),
) -> StrategyValue:
    """Optimal feedback fraction u*(t, T, y) with its f decomposition.

    Doubles the per-panel node count, starting from ``quad.nodes``, until two
    successive u* values agree to ``quad.rel_tol``; the finer value wins.
    t = T and d = 1 short-circuit to the posterior-mean Merton closed form
    before any quadrature (degenerate Gaussians break node placement).

    Raises
    ------
    InvalidAlpha
        For alpha >= 1 or alpha = 0.
    QuadratureNotConverged
        If the node cap is hit before two levels agree.
    """
    _power_check(alpha)
    if model.d == 1 or query.t == query.T:
        return _maturity_value(model, alpha, query.t, query.y)
    one_minus = 1.0 - alpha
    y_arr = np.array([query.y], dtype=float)
    # roundoff floor: doubling cannot settle below summation noise
    atol = 1e-13 * (np.abs(model.gammas).max() / (model.sigma * one_minus) + 1.0)

    n = quad.nodes
    cap = max(NODE_CAP, 2 * quad.nodes)
    u_prev = None
    while True:
        f = _fk_grid_once(model, alpha, query.t, query.T, y_arr, n, quad.half_width)[0]
        v = float(f @ model.gammas)
        u = v / (model.sigma * one_minus)
        if u_prev is not None and abs(u - u_prev) <= quad.rel_tol * max(
            abs(u), abs(u_prev)
        ) + atol:
            myopic = (posterior_mean(model, query.t, query.y) - model.r) / (
                model.sigma**2 * one_minus
            )
            f.setflags(write=False)
            return StrategyValue(
                u_star=u, v_star=v, f=f, myopic=myopic, hedging=u - myopic
            )
        if n >= cap:
            raise QuadratureNotConverged(
                f"u_star still moving by {abs(u - u_prev):.3e} at {n} nodes/panel"
            )
        u_prev = u
        n *= 2


def optimal_fraction_grid(
    model: MarketModel,
    alpha: float,
    t: float,
    T: float,
    y_values: np.ndarray,
    quad: QuadratureConfig = QuadratureConfig(),
) -> np.ndarray:
    """Vectorized u*(t, T, y) over an array of y values.

    Same doubling scheme as :func:`optimal_fraction`, with convergence
    measured on the worst point of the grid.
    """
    _power_check(alpha)
    one_minus = 1.0 - alpha
    y_arr = np.asarray(y_values, dtype=float).reshape(-1)
    if model.d == 1:
        return np.full(y_arr.size, model.gammas[0] / (model.sigma * one_minus))
    if t == T:
        if T == 0.0:  # likelihood is identically 1 at time zero
            v = float(model.prior @ model.gammas)
            return np.full(y_arr.size, v / (model.sigma * one_minus))
        lik = np.log(model.prior) + model.gammas * y_arr[:, None] - 0.5 * model.gammas**2 * T
        lik -= lik.max(axis=-1, keepdims=True)
        probs = np.exp(lik)
        probs /= probs.sum(axis=-1, keepdims=True)
        return probs @ model.gammas / (model.sigma * one_minus)
    atol = 1e-13 * (np.abs(model.gammas).max() / (model.sigma * one_minus) + 1.0)
    n = quad.nodes
    cap = max(NODE_CAP, 2 * quad.nodes)
    u_prev = None
    while True:
        f = _fk_grid_once(model, alpha, t, T, y_arr, n, quad.half_width)
        u = f @ model.gammas / (model.sigma * one_minus)
        if u_prev is not None:
            scale = np.maximum(np.abs(u), np.abs(u_prev))
            if np.all(np.abs(u - u_prev) <= quad.rel_tol * scale + atol):
                return u
        if n >= cap:
            raise QuadratureNotConverged(
                f"grid u_star still moving at {n} nodes/panel"
            )
        u_prev = u
        n *= 2


def log_utility_fraction(model: MarketModel, t: float, y: float) -> float:
    """Optimal fraction under logarithmic utility: (mu_hat(t, y) - r) / sigma^2.

    Independent of the horizon.
    """
    return (posterior_mean(model, t, y) - model.r) / model.sigma**2


def fk_profile(
    model: MarketModel,
    alpha_grid,
    T: float,
    t: float,
    y: float,
    quad: QuadratureConfig = QuadratureConfig(),
) -> np.ndarray:
    """Matrix of f_k(T, alpha) values, one row per alpha in the grid.

    Every row sums to 1; along increasing alpha, f_d is nondecreasing and
    f_1 nonincreasing.
    """
    alphas = np.asarray(alpha_grid, dtype=float).reshape(-1)
    out = np.empty((alphas.size, model.d))
    query = StrategyQuery(t=t, T=T, y=y)
    for i, a in enumerate(alphas):
        out[i] = optimal_fraction(model, float(a), query, quad).f
    return out


def mc_fraction(
    model: MarketModel,
    alpha: float,
    query: StrategyQuery,
    n_samples: int,
    seed: int,
) -> McFraction:
    """Monte Carlo estimate of u*(t, T, y), the quadrature's independent oracle.

    Forms the self-normalized ratio of the two defining expectations over
    W ~ N(0, T - t).  Because the numerator integrand equals the denominator
    integrand times the bounded posterior-weighted gamma average, the ratio
    is a weighted mean of values in [gamma_1, gamma_d]; the standard error
    comes from the usual ratio linearization.

    The denominator expectation is dominated by tilted samples around
    W = gamma_k (T - t) / (1 - alpha), which plain sampling never reaches
    once that is more than a few standard deviations out.  Draws therefore
    come from a defensive mixture proposal, equal weights over N(0, T - t)
    and its d single-Gaussian tilts, with explicit importance weights.
    """
    _power_check(alpha)
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    one_minus = 1.0 - alpha
    gam = model.gammas
    var = query.T - query.t
    scale = model.sigma * one_minus

    if var == 0.0:
        probs = posterior(model, query.T, query.y).probs
        return McFraction(
            estimate=float(probs @ gam) / scale,
            std_error=0.0,
            n_samples=n_samples,
        )

    rng = np.random.default_rng(seed)
    centers = np.concatenate(([0.0], gam * var / one_minus))
    comp = rng.integers(0, centers.size, size=n_samples)
    w_draw = centers[comp] + np.sqrt(var) * rng.standard_normal(n_samples)
    # log of phi_var(w) / proposal(w); the 1/(d+1) proposal weight and the
    # shared normal constant cancel inside the ratio estimator
    sq = (w_draw[:, None] - centers) ** 2 / (2.0 * var)
    log_is = -(w_draw**2) / (2.0 * var) - _lse(-sq, axis=-1) - np.log(centers.size)

    x = query.y + w_draw
    log_lik = np.log(model.prior) + gam * x[:, None] - 0.5 * gam * gam * query.T
    log_F = _lse(log_lik, axis=-1)
    v = np.exp(log_lik - log_F[:, None]) @ gam  # bounded in [gamma_1, gamma_d]

    log_B = log_F / one_minus + log_is
    log_B -= log_B.max()
    b = np.exp(log_B)
    b_total = b.sum()
    v_hat = float((b * v).sum() / b_total)
    resid = v - v_hat
    var_v = float((b * b * resid * resid).sum() / b_total**2)
    return McFraction(
        estimate=v_hat / scale,
        std_error=float(np.sqrt(var_v)) / scale,
        n_samples=n_samples,
    )
