"""Observed count panels, exposure weighting and the two log-likelihoods.

Counts are conditionally Poisson given the latent intensity path: cell
(g, i) has mean

    M_{g,i} = integral over period i of W_g(t) * lam_g(t) dt,

with W_g the daily piecewise-constant risk exposure.  The trajectory
log-likelihood (the "prior" of the latent path) is

    n log(rho) - rho T + sum_j log f_X(X_j)
      + sum_g log Gamma(lam_g(0); shape rho_g/kappa_g, rate eta_g),

where rho is the rate of the driving multivariate shot stream and f_X the
pattern-mixing jump-size density.  The conditional log-likelihood is the sum
of Poisson cell log-probabilities, including the -log N! constant so values
are comparable across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .shotnoise import MarginalShotParams, Trajectory, integrated_intensity

__all__ = [
    "CountsPanel",
    "ExposureSeries",
    "exposure_weighted_mass",
    "poisson_count_logprob",
    "log_conditional",
    "log_prior",
    "simulate_counts",
    "masses_for_trajectory",
    "gamma_logpdf",
]


@dataclass(frozen=True)
class CountsPanel:
    """Per-period claim counts, one row per margin.

    counts : (G, L) non-negative integers
    delta : period length in days; L * delta is the observation horizon
    """

    counts: np.ndarray
    delta: float = 1.0

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a (margins, periods) matrix")
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.floor(counts)) or np.any(counts < 0):
                raise ValueError("counts must be non-negative integers")
            counts = counts.astype(np.int64)
        object.__setattr__(self, "counts", counts.astype(np.int64))
        if self.delta <= 0.0:
            raise ValueError("delta must be > 0")

    @property
    def num_margins(self) -> int:
        return int(self.counts.shape[0])

    @property
    def num_periods(self) -> int:
        return int(self.counts.shape[1])

    @property
    def horizon(self) -> float:
        return self.num_periods * self.delta


@dataclass(frozen=True)
class ExposureSeries:
    """Daily piecewise-constant positive exposure per margin, shape (G, days)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", values)
        if np.any(values <= 0.0) or not np.all(np.isfinite(values)):
            raise ValueError("exposure must be strictly positive and finite")

    @classmethod
    def constant(cls, levels: Sequence[float], num_days: int) -> "ExposureSeries":
        return cls(np.tile(np.asarray(levels, dtype=float)[:, None], (1, num_days)))

    @property
    def num_margins(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_days(self) -> int:
        return int(self.values.shape[1])

    def margin(self, g: int) -> np.ndarray:
        return self.values[g]


def _check_alignment(traj: Trajectory, exposure: ExposureSeries, num_periods: int, delta: float) -> None:
    horizon = num_periods * delta
    if horizon > traj.horizon + 1e-9:
        raise ValueError(f"panel horizon {horizon} exceeds trajectory horizon {traj.horizon}")
    if exposure.num_days < math.ceil(horizon - 1e-9):
        raise ValueError(
            f"exposure covers {exposure.num_days} days < horizon {horizon}"
        )


def exposure_weighted_mass(
    traj: Trajectory,
    exposure: ExposureSeries,
    margin: int,
    period_index: int,
    delta: float = 1.0,
) -> float:
    """Expected count of one cell: sum over days d in the period of
    W(d) times the exact intensity integral over d (split at day boundaries)."""
    if not 0 <= margin < traj.num_margins:
        raise ValueError(f"margin {margin} out of range")
    if period_index < 0:
        raise ValueError("period_index out of range")
    t0 = period_index * delta
    t1 = (period_index + 1) * delta
    if t1 > traj.horizon + 1e-9:
        raise ValueError(f"period [{t0}, {t1}] beyond trajectory horizon {traj.horizon}")
    t1 = min(t1, traj.horizon)
    w = exposure.margin(margin)
    total = 0.0
    a = t0
    while a < t1 - 1e-12:
        day = int(a)
        b = min(float(day + 1), t1)
        if day >= w.size:
            raise ValueError(f"exposure series too short: day {day}")
        total += w[day] * integrated_intensity(traj, margin, a, b)
        a = b
    return total


def poisson_count_logprob(n: int, mass: float) -> float:
    """log of the Poisson pmf at count n with mean ``mass``.

    mass = 0 is the empty-process limit: 0 for n = 0, -inf otherwise.
    """
    if n < 0:
        raise ValueError("count must be >= 0")
    if mass < 0.0:
        raise ValueError("mass must be >= 0")
    if mass == 0.0:
        return 0.0 if n == 0 else -math.inf
    return -mass + n * math.log(mass) - math.lgamma(n + 1)


def masses_for_trajectory(
    traj: Trajectory,
    exposure: ExposureSeries,
    num_periods: int,
    delta: float = 1.0,
) -> np.ndarray:
    """All cell masses M_{g,i} for a panel shape, vectorised.

    For day-aligned periods (delta a whole number of days) this runs the
    O(jumps + days) decay recursion; otherwise it falls back to the exact
    per-cell closed form.
    """
    _check_alignment(traj, exposure, num_periods, delta)
    g_count = traj.num_margins
    days_per_period = delta
    if abs(days_per_period - round(days_per_period)) > 1e-9:
        out = np.empty((g_count, num_periods))
        for g in range(g_count):
            for i in range(num_periods):
                out[g, i] = exposure_weighted_mass(traj, exposure, g, i, delta)
        return out

    dpp = int(round(days_per_period))
    n_days = num_periods * dpp
    out = np.empty((g_count, num_periods))
    day_idx = np.minimum(traj.times.astype(np.int64), n_days - 1)
    for g in range(g_count):
        kappa = traj.decay_rates[g]
        x = traj.sizes[:, g]
        keep = (x > 0.0) & (traj.times < n_days)
        idx = day_idx[keep]
        xs = x[keep]
        ts = traj.times[keep]
        # end-of-day inflow and within-day integral of each jump's own day
        decay_to_end = np.exp(-kappa * (idx + 1.0 - ts))
        p = np.bincount(idx, weights=xs * decay_to_end, minlength=n_days)
        r = np.bincount(idx, weights=xs * (1.0 - decay_to_end) / kappa, minlength=n_days)
        drive = np.empty(n_days)
        drive[0] = traj.initial_values[g]
        drive[1:] = p[:-1]
        v = lfilter([1.0], [1.0, -math.exp(-kappa)], drive)  # day-start levels
        day_integral = v * (1.0 - math.exp(-kappa)) / kappa + r
        day_mass = exposure.margin(g)[:n_days] * day_integral
        out[g] = day_mass.reshape(num_periods, dpp).sum(axis=1)
    return out


def log_conditional(panel: CountsPanel, traj: Trajectory, exposure: ExposureSeries) -> float:
    """Conditional log-likelihood of the panel given the latent path,
    summed over cells with the -log N! constant included."""
    if panel.num_margins != traj.num_margins:
        raise ValueError(
            f"panel has {panel.num_margins} margins, trajectory {traj.num_margins}"
        )
    masses = masses_for_trajectory(traj, exposure, panel.num_periods, panel.delta)
    terms = []
    for g in range(panel.num_margins):
        for i in range(panel.num_periods):
            terms.append(poisson_count_logprob(int(panel.counts[g, i]), float(masses[g, i])))
    return math.fsum(terms)


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    """log density of Gamma(shape, rate) at x, with explicit boundary limits."""
    if x < 0.0:
        return -math.inf
    if x == 0.0:
        if shape > 1.0:
            return -math.inf
        if shape == 1.0:
            return math.log(rate)
        return math.inf
    return (shape - 1.0) * math.log(x) - rate * x + shape * math.log(rate) - math.lgamma(shape)


def log_prior(
    traj: Trajectory,
    params: Sequence[MarginalShotParams],
    size_model,
) -> float:
    """Log-likelihood of the latent trajectory itself.

    ``size_model`` supplies rho_total (driving-stream rate) and the jump-size
    log density f_X; initial values are stationary Gamma margins.
    """
    if len(params) != traj.num_margins:
        raise ValueError("one parameter set per margin required")
    n = traj.num_jumps
    total = n * math.log(size_model.rho_total) - size_model.rho_total * traj.horizon
    if n:
        total += float(np.sum(size_model.log_density_batch(traj.sizes)))
    for g, p in enumerate(params):
        total += gamma_logpdf(traj.initial_values[g], p.stationary_shape, p.eta)
    return total


def simulate_counts(
    traj: Trajectory,
    exposure: ExposureSeries,
    num_periods: int,
    rng: np.random.Generator,
    delta: float = 1.0,
) -> CountsPanel:
    """Draw N_{g,i} ~ Poisson(M_{g,i}), independent across cells given the path."""
    masses = masses_for_trajectory(traj, exposure, num_periods, delta)
    counts = rng.poisson(masses)
    return CountsPanel(counts.astype(np.int64), delta)
