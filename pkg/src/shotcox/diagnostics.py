"""Residual analysis, empirical copulas, decomposition and prediction.

Residuals are Pearson-standardised cell errors (N - M) / sqrt(M) with M the
posterior-mean exposure-weighted mass; under a well-specified model they are
mean 0, standard deviation 1 and serially uncorrelated.  Empirical copulas
bin rank-transformed pairs on a k x k grid.  Prediction decays the terminal
filtered intensity forward, simulates new shots under the fitted
decomposition, applies the exposure assumption and draws Poisson counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .calibration import FitResult
from .counts import CountsPanel
from .dependence import mean_common_marginal
from .shotnoise import Trajectory, terminal_intensities

__all__ = [
    "ResidualSeries",
    "AcfResult",
    "EmpiricalCopulaGrid",
    "PredictionSet",
    "pearson_residuals",
    "acf",
    "empirical_copula",
    "decompose_contributions",
    "predict",
    "dependency_measures",
]


@dataclass(frozen=True)
class ResidualSeries:
    """Pearson residuals per margin per period."""

    values: np.ndarray

    def margin(self, g: int) -> np.ndarray:
        return self.values[g]

    @property
    def means(self) -> np.ndarray:
        return self.values.mean(axis=1)

    @property
    def sds(self) -> np.ndarray:
        return self.values.std(axis=1, ddof=1)


def pearson_residuals(panel: CountsPanel, posterior_masses: np.ndarray) -> ResidualSeries:
    """(N - M) / sqrt(M) cell by cell; every mass must be positive."""
    masses = np.asarray(posterior_masses, dtype=float)
    if masses.shape != panel.counts.shape:
        raise ValueError("posterior masses must match the panel shape")
    if np.any(masses <= 0.0):
        raise ValueError("zero-mass cell: residual undefined")
    return ResidualSeries((panel.counts - masses) / np.sqrt(masses))


@dataclass(frozen=True)
class AcfResult:
    values: np.ndarray  # lag 0 .. max_lag
    band: float  # two-sided 95% band under whiteness, 2/sqrt(L)


def acf(series: np.ndarray, max_lag: int) -> AcfResult:
    """Sample autocorrelation with the plus/minus 2/sqrt(L) whiteness band."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size <= max_lag:
        raise ValueError("series must be 1-D and longer than max_lag")
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        raise ValueError("autocorrelation undefined for a constant series")
    vals = np.empty(max_lag + 1)
    vals[0] = 1.0
    for h in range(1, max_lag + 1):
        vals[h] = float(np.dot(xc[:-h], xc[h:])) / denom
    return AcfResult(vals, 2.0 / math.sqrt(x.size))


@dataclass(frozen=True)
class EmpiricalCopulaGrid:
    """k x k counts of rank-transformed pairs scaled to (0, 1]^2."""

    counts: np.ndarray

    @property
    def k(self) -> int:
        return int(self.counts.shape[0])

    @property
    def sample_size(self) -> int:
        return int(self.counts.sum())


def empirical_copula(x_series, y_series, k: int) -> EmpiricalCopulaGrid:
    """Rank both series (average ranks on ties), scale to (0, 1], bin k x k."""
    x = np.asarray(x_series, dtype=float)
    y = np.asarray(y_series, dtype=float)
    if x.size != y.size:
        raise ValueError("series must have equal length")
    if x.size < k:
        raise ValueError("need at least k observations")
    u = stats.rankdata(x, method="average") / x.size
    v = stats.rankdata(y, method="average") / y.size
    iu = np.minimum(np.ceil(u * k).astype(int) - 1, k - 1)
    iv = np.minimum(np.ceil(v * k).astype(int) - 1, k - 1)
    grid = np.zeros((k, k), dtype=np.int64)
    np.add.at(grid, (iu, iv), 1)
    return EmpiricalCopulaGrid(grid)


def decompose_contributions(
    samples: Sequence[Trajectory],
    fit: FitResult,
) -> list[dict]:
    """Share of each margin's integrated intensity carried by unique versus
    common shots, averaged over posterior trajectory draws.

    The initial-value term is attributed in proportion to the expected
    stationary inflow of each component (rate times mean size).
    """
    if not samples:
        raise ValueError("posterior samples required")
    dep = fit.dependence()
    tails = fit.tails
    g_count = samples[0].num_margins
    out = []
    for g in range(g_count):
        p = fit.marginal_params[g]
        common_marginal_mean = mean_common_marginal(g, tails, fit.clayton.delta)
        common_inflow = dep.rho_common * common_marginal_mean
        unique_inflow = p.rho / p.eta - common_inflow  # exponential margin total
        share_unique = unique_inflow / (unique_inflow + common_inflow)

        uni_total = 0.0
        com_total = 0.0
        for s in samples:
            kappa = s.decay_rates[g]
            t_span = s.horizon
            decay_int = (1.0 - np.exp(-kappa * (t_span - s.times))) / kappa
            x = s.sizes[:, g]
            both = (s.sizes[:, 0] > 0.0) & (s.sizes[:, 1] > 0.0) if g_count == 2 else np.zeros(s.num_jumps, bool)
            uni_total += float(np.sum(x * decay_int * ~both))
            com_total += float(np.sum(x * decay_int * both))
            init_term = s.initial_values[g] * (1.0 - math.exp(-kappa * t_span)) / kappa
            uni_total += init_term * share_unique
            com_total += init_term * (1.0 - share_unique)
        total = uni_total + com_total
        out.append(
            {
                "margin": g,
                "unique_pct": 100.0 * uni_total / total,
                "common_pct": 100.0 * com_total / total,
            }
        )
    return out


@dataclass(frozen=True)
class PredictionSet:
    """Simulated future count totals per margin, one row per simulation."""

    totals: np.ndarray  # (n_sims, G) integers
    horizon: float
    initial_intensities: tuple[float, ...] | None  # None: stationary draws

    @property
    def n_sims(self) -> int:
        return int(self.totals.shape[0])


def _suffix_weights(w_days: np.ndarray, kappa: float) -> np.ndarray:
    """C_d = sum over days e >= d of W_e exp(-kappa (e - d)) B."""
    b = (1.0 - math.exp(-kappa)) / kappa
    c = np.zeros(w_days.size + 1)
    decay = math.exp(-kappa)
    for d in range(w_days.size - 1, -1, -1):
        c[d] = w_days[d] * b + decay * c[d + 1]
    return c


def _exposure_mass_factor(taus: np.ndarray, w_days: np.ndarray, c: np.ndarray, kappa: float):
    """Exposure-weighted integral of exp(-kappa (t - tau)) from tau onward."""
    if w_days.size and np.all(w_days == w_days[0]):
        # constant exposure: closed form; decay older than 40/kappa rounds to
        # the full integral at double precision, skipping the exp
        s = w_days.size - taus
        out = np.full(taus.size, w_days[0] / kappa)
        near = s < 40.0 / kappa
        if np.any(near):
            out[near] = w_days[0] * -np.expm1(-kappa * s[near]) / kappa
        return out
    d0 = taus.astype(np.int64)
    f0 = np.exp(-kappa * (d0 + 1.0 - taus))
    return w_days[d0] * (1.0 - f0) / kappa + f0 * c[d0 + 1]


def predict(
    fit: FitResult,
    last_trajectory: Trajectory | None,
    exposure_assumption,
    horizon: float,
    n_sims: int,
    rng: np.random.Generator,
    batch_size: int | None = None,
) -> PredictionSet:
    """Distribution of total future counts per margin over ``horizon`` days.

    The initial intensity is the filtered value at the end of
    ``last_trajectory``; with ``None`` every simulation draws a stationary
    initial value instead.  ``exposure_assumption`` is either one constant
    level per margin or a (margins, days) daily array.
    """
    if horizon <= 0 or abs(horizon - round(horizon)) > 1e-9:
        raise ValueError("prediction horizon must be a positive whole number of days")
    n_days = int(round(horizon))
    params = fit.marginal_params
    g_count = len(params)
    dep = fit.dependence()

    w = np.asarray(exposure_assumption, dtype=float)
    if w.ndim == 1:
        w = np.tile(w[:, None], (1, n_days))
    if w.shape != (g_count, n_days):
        raise ValueError(f"exposure must be {g_count} levels or a ({g_count}, {n_days}) array")

    if last_trajectory is not None:
        init = np.asarray(terminal_intensities(last_trajectory), dtype=float)
        init_desc: tuple[float, ...] | None = tuple(init)
    else:
        init = None
        init_desc = None

    c_weights = [_suffix_weights(w[g], params[g].kappa) for g in range(g_count)]

    rates = [dep.rho_common] + [dep.rho_unique[g] for g in range(g_count)]
    if batch_size is None:
        expected_jumps = max(sum(rates) * n_days, 1.0)
        batch_size = max(int(1.2e7 / expected_jumps), 16)

    totals = np.empty((n_sims, g_count), dtype=np.int64)
    done = 0
    while done < n_sims:
        b = min(batch_size, n_sims - done)
        masses = np.zeros((b, g_count))
        if init is None:
            lam0 = np.column_stack(
                [rng.gamma(p.stationary_shape, 1.0 / p.eta, size=b) for p in params]
            )
        else:
            lam0 = np.tile(init, (b, 1))
        for g in range(g_count):
            masses[:, g] += lam0[:, g] * c_weights[g][0]

        # common shots hit every margin with a dependent size pair
        if dep.rho_common > 0.0:
            counts_c = rng.poisson(dep.rho_common * n_days, size=b)
            sim_id = np.repeat(np.arange(b), counts_c)
            taus = rng.uniform(0.0, n_days, size=sim_id.size)
            sizes = dep.sample_common_sizes(sim_id.size, rng)
            for g in range(g_count):
                psi = _exposure_mass_factor(taus, w[g], c_weights[g], params[g].kappa)
                masses[:, g] += np.bincount(sim_id, weights=sizes[:, g] * psi, minlength=b)

        for g in range(g_count):
            rate = dep.rho_unique[g]
            if rate <= 0.0:
                continue
            counts_u = rng.poisson(rate * n_days, size=b)
            sim_id = np.repeat(np.arange(b), counts_u)
            taus = rng.uniform(0.0, n_days, size=sim_id.size)
            sizes = dep.sample_unique_sizes(g, sim_id.size, rng)
            psi = _exposure_mass_factor(taus, w[g], c_weights[g], params[g].kappa)
            masses[:, g] += np.bincount(sim_id, weights=sizes * psi, minlength=b)

        totals[done : done + b] = rng.poisson(masses)
        done += b

    return PredictionSet(totals=totals, horizon=float(horizon), initial_intensities=init_desc)


def dependency_measures(pred: PredictionSet) -> dict:
    """Pearson correlation, Kendall's tau and Spearman's rho of the totals."""
    if pred.n_sims < 2:
        raise ValueError("at least two simulations required")
    x = pred.totals[:, 0].astype(float)
    y = pred.totals[:, 1].astype(float)
    if x.std() == 0.0 or y.std() == 0.0:
        raise ValueError("dependency measures undefined for a constant margin")
    pearson = float(np.corrcoef(x, y)[0, 1])
    tau = float(stats.kendalltau(x, y).statistic)
    rho = float(stats.spearmanr(x, y).statistic)
    return {"pearson": pearson, "kendall_tau": tau, "spearman_rho": rho}
