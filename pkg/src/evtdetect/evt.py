"""Extreme-value machinery for peaks-over-threshold anomaly thresholds.

The pipeline is: pick an initial threshold ``T`` as a high empirical quantile
of the observations, collect the excesses above ``T``, fit a generalized
Pareto distribution (GPD) to the excesses by maximum likelihood, and convert a
target risk level ``q`` into a detection threshold lying beyond ``T``.

The GPD maximum likelihood problem is reduced to one-dimensional root finding
following Grimshaw: with theta = gamma / sigma, every stationary point of the
profile likelihood solves u(theta) * v(theta) = 1 where

    u(theta) = mean(1 / (1 + theta * x_i))
    v(theta) = 1 + mean(log(1 + theta * x_i))

and each root theta* yields gamma = v(theta*) - 1, sigma = gamma / theta*.
theta = 0 corresponds to the exponential special case (gamma = 0,
sigma = mean). Candidates are ranked by GPD log-likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_EXCESSES = 30
GAMMA_ZERO_TOL = 1e-8

# Below gamma = -1 the GPD likelihood diverges at the support endpoint and the
# MLE does not exist; estimates much below -1 are always artifacts of the
# endpoint offset, so candidates under this floor are discarded. The floor
# leaves room for genuine short tails such as uniform samples (gamma = -1).
GAMMA_FLOOR = -1.25

_GRID_SUBINTERVALS = 1000
_BISECT_TOL = 1e-12
_CDF_CLAMP = 1e-12


class TooFewExcesses(ValueError):
    """Not enough excesses above the initial threshold to fit a GPD."""


class SupportViolation(ValueError):
    """An observation lies outside the support of the candidate GPD."""


class RiskTooHigh(ValueError):
    """Risk level q does not push the threshold beyond the initial one."""


@dataclass(frozen=True)
class GpdFit:
    """Estimated GPD parameters plus peaks-over-threshold bookkeeping.

    ``gamma`` is the extreme value index, ``sigma`` the scale. ``threshold``
    is the initial threshold the excesses were taken above, ``total_count``
    the number of observations it was derived from, and ``peak_count`` the
    number of observations strictly above it.
    """

    gamma: float
    sigma: float
    threshold: float = 0.0
    total_count: int = 0
    peak_count: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.peak_count > self.total_count:
            raise ValueError("peak_count cannot exceed total_count")

    @property
    def tail_class(self) -> str:
        """Descriptive tail family: frechet, gumbel, or weibull."""
        if self.gamma > GAMMA_ZERO_TOL:
            return "frechet"
        if self.gamma < -GAMMA_ZERO_TOL:
            return "weibull"
        return "gumbel"


@dataclass(frozen=True)
class AdResult:
    """Anderson-Darling statistic with a parametric-bootstrap p-value."""

    statistic: float
    p_value: float
    bootstrap_reps: int

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")


def initial_threshold(errors: np.ndarray, level: float) -> float:
    """Empirical quantile by linear interpolation between order statistics."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("cannot take a quantile of an empty sample")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(np.quantile(errors, level))


def excesses_over(errors: np.ndarray, threshold: float) -> np.ndarray:
    """Strictly positive exceedances ``x - threshold`` for ``x > threshold``."""
    errors = np.asarray(errors, dtype=float)
    return errors[errors > threshold] - threshold


def gpd_log_likelihood(excesses: np.ndarray, gamma: float, sigma: float) -> float:
    """GPD log-likelihood of positive excesses under (gamma, sigma)."""
    x = np.asarray(excesses, dtype=float)
    if not sigma > 0:
        raise SupportViolation("sigma must be positive")
    m = x.size
    if abs(gamma) < GAMMA_ZERO_TOL:
        return float(-m * np.log(sigma) - x.sum() / sigma)
    z = 1.0 + gamma * x / sigma
    if np.any(z <= 0):
        raise SupportViolation(
            f"excess outside GPD support for gamma={gamma}, sigma={sigma}"
        )
    return float(-m * np.log(sigma) - (1.0 + 1.0 / gamma) * np.log(z).sum())


def _u_v(theta: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Chunked so the (grid, sample) intermediate stays small.
    theta = np.atleast_1d(theta)
    u = np.empty_like(theta)
    v = np.empty_like(theta)
    chunk = max(1, int(2e6 // max(x.size, 1)))
    for lo in range(0, theta.size, chunk):
        s = 1.0 + theta[lo : lo + chunk, None] * x[None, :]
        u[lo : lo + chunk] = np.mean(1.0 / s, axis=1)
        v[lo : lo + chunk] = 1.0 + np.mean(np.log(s), axis=1)
    return u, v


def _bisect(x: np.ndarray, lo: float, hi: float, w_lo: float) -> float:
    # w changes sign on [lo, hi]; plain bisection to an interval <= _BISECT_TOL.
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        u, v = _u_v(np.array([mid]), x)
        w_mid = float(u[0] * v[0] - 1.0)
        if (w_mid < 0) == (w_lo < 0):
            lo, w_lo = mid, w_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _roots_on_grid(x: np.ndarray, grid: np.ndarray) -> list[float]:
    u, v = _u_v(grid, x)
    w = u * v - 1.0
    roots = []
    sign_change = np.nonzero(np.signbit(w[:-1]) != np.signbit(w[1:]))[0]
    for i in sign_change:
        roots.append(_bisect(x, float(grid[i]), float(grid[i + 1]), float(w[i])))
    # A grid point may land on a root exactly.
    for i in np.nonzero(w == 0.0)[0]:
        roots.append(float(grid[i]))
    return roots


def fit_gpd(
    excesses: np.ndarray,
    threshold: float = 0.0,
    total_count: int | None = None,
) -> GpdFit:
    """Maximum-likelihood GPD fit to positive excesses via Grimshaw's reduction.

    Root search covers (-1/x_max + eps, 0) and (0, theta_max) on log-spaced
    grids of ``_GRID_SUBINTERVALS`` subintervals per side, excluding a
    neighborhood of zero where u*v - 1 vanishes identically; theta = 0 enters
    as the exponential candidate. The best candidate by log-likelihood wins,
    with ties broken toward smaller ``|gamma|``.
    """
    x = np.asarray(excesses, dtype=float)
    if x.size < MIN_EXCESSES:
        raise TooFewExcesses(f"need at least {MIN_EXCESSES} excesses, got {x.size}")
    if np.any(x <= 0):
        raise ValueError("excesses must be strictly positive")

    x_max = float(x.max())
    x_mean = float(x.mean())

    eps = 1e-8 / x_max
    theta_min = -1.0 / x_max + eps
    theta_max = 1e4 / x_mean
    zero_gap = 1e-8 / x_mean

    # The left endpoint enters as a candidate of its own: for short-tailed
    # samples (true gamma <= -1) the profile likelihood increases monotonically
    # toward the singular point -1/x_max and u*v = 1 has no interior root, so
    # the constrained maximum sits at the endpoint offset.
    roots: list[float] = [theta_min]
    if -theta_min > zero_gap:
        mags = np.geomspace(-theta_min, zero_gap, _GRID_SUBINTERVALS + 1)
        roots += _roots_on_grid(x, -mags)  # ascending from theta_min toward 0
    roots += _roots_on_grid(x, np.geomspace(zero_gap, theta_max, _GRID_SUBINTERVALS + 1))

    # theta = 0 solves u*v = 1 identically; it enters as the exponential candidate.
    candidates: list[tuple[float, float]] = [(0.0, x_mean)]
    for theta in roots:
        _, v = _u_v(np.array([theta]), x)
        gamma = float(v[0] - 1.0)
        sigma = gamma / theta
        if sigma > 0 and gamma >= GAMMA_FLOOR:
            candidates.append((gamma, sigma))

    best = candidates[0]
    best_ll = gpd_log_likelihood(x, *best)
    for gamma, sigma in candidates[1:]:
        try:
            ll = gpd_log_likelihood(x, gamma, sigma)
        except SupportViolation:
            continue
        if ll > best_ll + 1e-12 or (abs(ll - best_ll) <= 1e-12 and abs(gamma) < abs(best[0])):
            best, best_ll = (gamma, sigma), max(ll, best_ll)

    gamma, sigma = best
    return GpdFit(
        gamma=gamma,
        sigma=sigma,
        threshold=threshold,
        total_count=int(total_count) if total_count is not None else x.size,
        peak_count=x.size,
    )


def fit_tail(errors: np.ndarray, level: float = 0.98) -> GpdFit:
    """Full peaks-over-threshold fit: quantile threshold, excesses, GPD MLE."""
    errors = np.asarray(errors, dtype=float)
    t = initial_threshold(errors, level)
    return fit_gpd(excesses_over(errors, t), threshold=t, total_count=errors.size)


def pot_threshold(fit: GpdFit, risk: float) -> float:
    """Detection threshold with exceedance probability ``risk``.

    Inverts the fitted tail: the returned value t satisfies
    ``tail_probability(t, fit) == risk`` and always exceeds ``fit.threshold``
    under the precondition ``0 < risk < peak_count / total_count``.
    """
    if fit.total_count <= 0 or fit.peak_count <= 0:
        raise ValueError("fit lacks peaks-over-threshold counts")
    ratio = fit.peak_count / fit.total_count
    if not 0.0 < risk < ratio:
        raise RiskTooHigh(
            f"risk must lie in (0, {ratio:.6g}) so the threshold exceeds the initial one"
        )
    log_a = np.log(risk * fit.total_count / fit.peak_count)
    if abs(fit.gamma) < GAMMA_ZERO_TOL:
        return float(fit.threshold - fit.sigma * log_a)
    return float(fit.threshold + fit.sigma / fit.gamma * np.expm1(-fit.gamma * log_a))


def tail_probability(x: float, fit: GpdFit) -> float:
    """P(X > x) under the fitted tail, for x at or beyond the initial threshold."""
    if x < fit.threshold:
        raise ValueError("tail probability is only defined at or beyond the threshold")
    if fit.total_count <= 0 or fit.peak_count <= 0:
        raise ValueError("fit lacks peaks-over-threshold counts")
    scale = fit.peak_count / fit.total_count
    z = fit.gamma * (x - fit.threshold) / fit.sigma
    if abs(fit.gamma) < GAMMA_ZERO_TOL:
        return float(scale * np.exp(-(x - fit.threshold) / fit.sigma))
    if z <= -1.0:
        # At or beyond the finite endpoint of a short (gamma < 0) tail.
        return 0.0
    return float(scale * np.exp(-np.log1p(z) / fit.gamma))


def gpd_cdf(x: np.ndarray, gamma: float, sigma: float) -> np.ndarray:
    """CDF of the GPD at excesses ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    if abs(gamma) < GAMMA_ZERO_TOL:
        return -np.expm1(-x / sigma)
    z = np.maximum(1.0 + gamma * x / sigma, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(z > 0.0, -np.expm1(-np.log(z) / gamma), 1.0)


def sample_gpd(
    rng: np.random.Generator, gamma: float, sigma: float, size: int
) -> np.ndarray:
    """Inverse-CDF samples: x = (sigma/gamma) * ((1-u)^(-gamma) - 1)."""
    u = rng.uniform(size=size)
    if abs(gamma) < GAMMA_ZERO_TOL:
        return -sigma * np.log1p(-u)
    return sigma / gamma * np.expm1(-gamma * np.log1p(-u))


def _ad_statistic(excesses: np.ndarray, gamma: float, sigma: float) -> float:
    z = np.sort(gpd_cdf(np.sort(excesses), gamma, sigma))
    z = np.clip(z, _CDF_CLAMP, 1.0 - _CDF_CLAMP)
    m = z.size
    i = np.arange(1, m + 1)
    return float(-m - np.mean((2 * i - 1) * (np.log(z) + np.log(1.0 - z[::-1]))))


def anderson_darling(
    excesses: np.ndarray,
    fit: GpdFit,
    bootstrap_reps: int = 500,
    seed: int | np.random.Generator | None = 0,
) -> AdResult:
    """Anderson-Darling compliance test of excesses against a fitted GPD.

    Because the GPD parameters are estimated from the same sample, the
    p-value comes from a parametric bootstrap: draw from the fitted GPD,
    refit, recompute the statistic, and report the fraction of bootstrap
    statistics at least as large as the observed one.
    """
    x = np.asarray(excesses, dtype=float)
    if x.size < MIN_EXCESSES:
        raise TooFewExcesses(
            f"need at least {MIN_EXCESSES} excesses for the compliance test, got {x.size}"
        )
    observed = _ad_statistic(x, fit.gamma, fit.sigma)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(bootstrap_reps):
        resample = sample_gpd(rng, fit.gamma, fit.sigma, x.size)
        refit = fit_gpd(resample)
        if _ad_statistic(resample, refit.gamma, refit.sigma) >= observed:
            exceed += 1
    return AdResult(
        statistic=observed,
        p_value=exceed / bootstrap_reps,
        bootstrap_reps=bootstrap_reps,
    )
