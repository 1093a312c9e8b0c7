"""Stage-wise Monte Carlo EM calibration.

Estimation is staged in the inference-functions-for-margins style: each
margin's shot-noise triple is fitted on its own counts first, then the
dependence parameter is fitted with the marginals held fixed.  Every E-step
runs the reversible-jump filter and keeps a fixed number of posterior
trajectory draws from the second half of the chain; the M-step maximises the
sample-averaged complete-data log-likelihood.

M-step updates for a margin:

    rho   <- (mean posterior jump count) / T          (closed form)
    eta   <- (mean n + rho/kappa) / (mean sum X + mean lam0)   (closed form)
    kappa <- 1-D golden-section maximiser of Q        (enters through the
             cell masses and the Gamma initial-value shape)

For the dependence parameter only the jump-pattern rates and size densities
depend on it, so its M-step maximises

    Q(delta) = -rho_total(delta) T + mean over samples of
               sum over jumps of log nu(x_j; delta)

with nu the Levy-measure density of the jump's zero pattern.

Initial values come from moment matching: the stationary relations
E[lam] = rho/(kappa eta), Var[lam] = rho/(kappa eta^2) and the lag decay
exp(-kappa Delta) of the intensity autocovariance identify the triple from
the mean, variance and lag-1 autocovariance of exposure-standardised counts
(the Poisson layer adds mean/W to the variance but nothing to lag >= 1
autocovariances).  The dependence parameter starts from matching the
empirical cross-covariance to rho_common(delta) E[X1 X2] / (kappa1+kappa2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.signal import lfilter

from .counts import CountsPanel, ExposureSeries
from .dependence import (
    ClaytonDependence,
    ClaytonParam,
    MarginalTail,
    UnivariateExponentialSizes,
    clayton_value,
    mean_common_cross_product,
)
from .filtering import FilterConfig, FilterResult, run_filter
from .shotnoise import MarginalShotParams, Trajectory, theoretical_cov

__all__ = [
    "EmConfig",
    "MarginalFit",
    "CopulaFit",
    "FitResult",
    "moment_match_marginal",
    "moment_match_copula",
    "merge_marginal_trajectories",
    "fit_marginal",
    "fit_copula",
]

KAPPA_MIN = 1e-3
KAPPA_MAX = 15.0
DELTA_MIN = 0.01
DELTA_MAX = 100.0


@dataclass(frozen=True)
class EmConfig:
    """EM schedule: chain length per E-step and posterior sample count."""

    em_iters: int = 150
    mcmc_iters: int = 20_000
    num_samples: int = 100
    convergence_window: int = 50

    def __post_init__(self) -> None:
        if min(self.em_iters, self.mcmc_iters, self.num_samples) <= 0:
            raise ValueError("EmConfig fields must be positive")
        if self.num_samples > self.mcmc_iters / 2:
            raise ValueError("num_samples cannot exceed half the chain length")


@dataclass
class MarginalFit:
    params: MarginalShotParams
    trace: list[dict]
    final_trajectory: Trajectory
    initial_params: MarginalShotParams
    flagged_iterations: list[int] = field(default_factory=list)


@dataclass
class CopulaFit:
    param: ClaytonParam
    trace: list[dict]
    final_trajectory: Trajectory
    samples: list[Trajectory]
    initial_param: ClaytonParam
    flagged_iterations: list[int] = field(default_factory=list)


@dataclass
class FitResult:
    """Bundle of the staged fit: marginal triples, dependence, traces."""

    marginal_params: tuple[MarginalShotParams, ...]
    clayton: ClaytonParam
    marginal_traces: tuple[list[dict], ...]
    copula_trace: list[dict]
    posterior_samples: list[Trajectory]

    @property
    def tails(self) -> tuple[MarginalTail, ...]:
        return tuple(MarginalTail(p.rho, p.eta) for p in self.marginal_params)

    def dependence(self) -> ClaytonDependence:
        return ClaytonDependence(self.tails, self.clayton.delta)


# ---------------------------------------------------------------------------
# moment-matching initialisers
# ---------------------------------------------------------------------------

def _standardised_counts(panel: CountsPanel, exposure: ExposureSeries, margin: int):
    """Per-period counts divided by mean daily exposure in the period."""
    delta = panel.delta
    dpp = int(round(delta))
    if abs(delta - dpp) > 1e-9:
        raise ValueError("moment matching requires day-aligned periods")
    n_days = panel.num_periods * dpp
    w = exposure.margin(margin)[:n_days].reshape(panel.num_periods, dpp).mean(axis=1)
    z = panel.counts[margin] / (w * dpp)
    return z, w


def _integrated_var_factor(kappa_delta: float) -> float:
    """Var of the per-period integral of a unit-variance OU-type path."""
    return 2.0 * (kappa_delta - 1.0 + math.exp(-kappa_delta)) / kappa_delta**2


def _lag1_cov_factor(kappa_delta: float) -> float:
    return (1.0 - math.exp(-kappa_delta)) ** 2 / kappa_delta**2


def moment_match_marginal(
    panel: CountsPanel,
    exposure: ExposureSeries,
    margin: int = 0,
) -> MarginalShotParams:
    """Initial shot-noise triple from mean, variance and lag-1 autocovariance.

    The ratio of the lag-1 autocovariance to the Poisson-corrected variance
    excess depends on kappa alone; the variance excess then gives the
    stationary variance and the mean closes the system.  Degenerate moments
    fall back to guarded defaults with a warning.
    """
    if panel.num_periods < 3:
        raise ValueError("at least 3 periods required")
    delta = panel.delta
    z, w = _standardised_counts(panel, exposure, margin)
    big_l = z.size
    mean_rate = float(z.mean()) / delta
    if mean_rate <= 0.0:
        warnings.warn("margin has no counts; returning guard defaults")
        return MarginalShotParams(rho=KAPPA_MAX, eta=1.0, kappa=KAPPA_MAX)

    zc = z - z.mean()
    var_z = float(np.dot(zc, zc)) / (big_l - 1)

    def autocov(h):
        return float(np.dot(zc[:-h], zc[h:])) / (big_l - 1)

    poisson_part = float(np.mean(panel.counts[margin] / (w * delta) ** 2))
    var_excess = var_z - poisson_part

    # Least-squares fit of (stationary variance, kappa) to the short-lag
    # autocovariance function of the standardised counts: the h = 0 point is
    # the Poisson-corrected variance excess, lags >= 1 are uncontaminated by
    # the Poisson layer, and the model predicts
    #   g_0 = V d^2 f_var(kd),  g_h = V d^2 f_lag1(kd) e^{-kd (h-1)}.
    # V profiles out analytically, leaving a 1-D kappa problem.
    def fit_autocov(n_lags: int):
        obs = np.array([var_excess] + [autocov(h) for h in range(1, n_lags + 1)])

        def profiled_sse(kd):
            shape = np.empty(n_lags + 1)
            shape[0] = _integrated_var_factor(kd)
            shape[1:] = _lag1_cov_factor(kd) * np.exp(-kd * np.arange(n_lags))
            scale = float(np.dot(shape, obs) / np.dot(shape, shape))
            return float(np.sum((obs - scale * shape) ** 2)), scale

        res = optimize.minimize_scalar(
            lambda log_kd: profiled_sse(math.exp(log_kd))[0],
            bounds=(math.log(1e-4), math.log(50.0)),
            method="bounded",
            options={"xatol": 1e-10},
        )
        kd = math.exp(res.x)
        sse, scale = profiled_sse(kd)
        if scale <= 0.0:
            return None
        # degenerate when the fitted lag-1 autocovariance sits inside the
        # sampling-noise band of the estimator (no usable decay signal)
        fitted_c1 = scale * _lag1_cov_factor(kd)
        if fitted_c1 < 2.0 * var_z / math.sqrt(big_l):
            return None
        return kd / delta, scale / delta**2  # kappa, Var[lam]

    solution = None
    if var_excess > 0.0 and autocov(1) > 0.0:
        solution = fit_autocov(min(5, big_l - 2))
        if solution is not None:
            # re-fit with the lag span matched to the fitted decay length
            n_lags = max(2, min(int(math.ceil(4.0 / (solution[0] * delta))), 40, big_l - 2))
            solution = fit_autocov(n_lags) or solution
    if solution is None:
        warnings.warn(
            "count moments give no usable decay signal; kappa pinned at guard"
        )
        kappa = KAPPA_MAX
        if var_excess > 0.0:
            lam_var = var_excess / (_integrated_var_factor(kappa * delta) * delta**2)
        else:
            warnings.warn("no overdispersion beyond the Poisson layer; default eta = 1")
            lam_var = mean_rate  # forces eta = 1
    else:
        kappa, lam_var = solution
        kappa = min(max(kappa, KAPPA_MIN), KAPPA_MAX)
    eta = mean_rate / lam_var
    rho = mean_rate * kappa * eta
    return MarginalShotParams(rho=rho, eta=eta, kappa=kappa)


def moment_match_copula(
    panel: CountsPanel,
    exposure: ExposureSeries,
    marginals: Sequence[MarginalShotParams],
) -> ClaytonParam:
    """Initial dependence parameter from the empirical cross covariance.

    Matches cov(z_1, z_2) of exposure-standardised counts, corrected for the
    within-period integration smoothing, to the stationary cross covariance
    rho_common(delta) E_delta[X1 X2] / (kappa1 + kappa2).
    """
    if panel.num_margins != 2 or len(marginals) != 2:
        raise NotImplementedError("unimplemented dimension: bivariate only")
    delta = panel.delta
    z1, _ = _standardised_counts(panel, exposure, 0)
    z2, _ = _standardised_counts(panel, exposure, 1)
    emp = float(np.cov(z1, z2)[0, 1])
    if emp <= 0.0:
        warnings.warn("non-positive cross covariance; dependence floored")
        return ClaytonParam(DELTA_MIN)

    k1, k2 = marginals[0].kappa, marginals[1].kappa
    smoothing = (
        (k1 * delta - 1.0 + math.exp(-k1 * delta)) / k1**2
        + (k2 * delta - 1.0 + math.exp(-k2 * delta)) / k2**2
    )
    target = emp / smoothing  # instantaneous cross covariance of the paths

    tails = (
        MarginalTail(marginals[0].rho, marginals[0].eta),
        MarginalTail(marginals[1].rho, marginals[1].eta),
    )

    def gap(log_d):
        d = math.exp(log_d)
        implied = theoretical_cov(
            clayton_value(tails[0].rho, tails[1].rho, d),
            mean_common_cross_product(tails, d),
            k1,
            k2,
        )
        return implied - target

    lo, hi = math.log(DELTA_MIN), math.log(DELTA_MAX)
    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo >= 0.0:
        warnings.warn("cross covariance below the dependence floor")
        return ClaytonParam(DELTA_MIN)
    if g_hi <= 0.0:
        warnings.warn("cross covariance above the model ceiling; delta capped")
        return ClaytonParam(DELTA_MAX)
    log_d = optimize.brentq(gap, lo, hi, xtol=1e-10)
    return ClaytonParam(math.exp(log_d))


# ---------------------------------------------------------------------------
# merged initial trajectory
# ---------------------------------------------------------------------------

def merge_marginal_trajectories(
    trajs: Sequence[Trajectory],
    threshold: float = 0.01,
) -> Trajectory:
    """Stack per-margin trajectories into one multivariate trajectory.

    Jumps from different inputs arriving within ``threshold`` days are
    merged into a single multivariate jump (the sizes add coordinate-wise,
    the later arrival time is kept); everything else is zero-padded.  Jumps
    from the same input never merge.
    """
    if not trajs:
        raise ValueError("at least one trajectory required")
    horizon = trajs[0].horizon
    for t in trajs:
        if abs(t.horizon - horizon) > 1e-9:
            raise ValueError("all trajectories must share the horizon")
    offsets = np.cumsum([0] + [t.num_margins for t in trajs])
    g_total = int(offsets[-1])

    events = []  # (time, input index, local size row)
    for k, t in enumerate(trajs):
        for i in range(t.num_jumps):
            events.append((float(t.times[i]), k, t.sizes[i]))
    events.sort(key=lambda e: e[0])

    merged_times: list[float] = []
    merged_sizes: list[np.ndarray] = []

    cluster_time = None
    cluster_anchor = None
    cluster_inputs: set[int] = set()
    cluster_row = None

    def flush():
        if cluster_row is None:
            return
        t_out = cluster_time
        if merged_times and t_out <= merged_times[-1]:
            t_out = math.nextafter(merged_times[-1], math.inf)
        merged_times.append(t_out)
        merged_sizes.append(cluster_row)

    for t, k, row in events:
        joins = (
            cluster_row is not None
            and k not in cluster_inputs
            and t - cluster_anchor <= threshold
        )
        if joins:
            cluster_time = max(cluster_time, t)
            cluster_inputs.add(k)
            cluster_row[offsets[k] : offsets[k + 1]] += row
        else:
            flush()
            cluster_anchor = t
            cluster_time = t
            cluster_inputs = {k}
            cluster_row = np.zeros(g_total)
            cluster_row[offsets[k] : offsets[k + 1]] += row
    flush()

    init = tuple(v for t in trajs for v in t.initial_values)
    decay = tuple(k for t in trajs for k in t.decay_rates)
    n = len(merged_times)
    sizes = np.array(merged_sizes).reshape(n, g_total)
    return Trajectory(init, np.array(merged_times), sizes, horizon, decay)


# ---------------------------------------------------------------------------
# marginal MCEM
# ---------------------------------------------------------------------------

class _MarginalEStats:
    """Posterior-sample statistics needed by the marginal M-step."""

    def __init__(self, samples: Sequence[Trajectory], panel: CountsPanel,
                 exposure: ExposureSeries, margin: int):
        self.s_count = len(samples)
        self.ns = np.array([s.num_jumps for s in samples], dtype=float)
        self.sum_x = np.array([float(s.sizes[:, 0].sum()) for s in samples])
        self.lam0 = np.array([s.initial_values[0] for s in samples])
        self.horizon = samples[0].horizon

        dpp = int(round(panel.delta))
        self.dpp = dpp
        self.num_periods = panel.num_periods
        self.n_days = self.num_periods * dpp
        self.w_days = exposure.margin(margin)[: self.n_days]
        self.counts = panel.counts[0].astype(float)

        times = np.concatenate([s.times for s in samples]) if samples else np.empty(0)
        sizes = np.concatenate([s.sizes[:, 0] for s in samples]) if samples else np.empty(0)
        sample_id = np.repeat(np.arange(self.s_count), [s.num_jumps for s in samples])
        keep = (sizes > 0.0) & (times < self.n_days)
        self.times = times[keep]
        self.sizes = sizes[keep]
        self.flat_day = sample_id[keep] * self.n_days + self.times.astype(np.int64)

    def masses(self, kappa: float) -> np.ndarray:
        """(samples, periods) cell masses at decay rate kappa."""
        day_end = np.floor(self.times) + 1.0
        decay = np.exp(-kappa * (day_end - self.times))
        total = self.s_count * self.n_days
        p = np.bincount(self.flat_day, weights=self.sizes * decay, minlength=total)
        r = np.bincount(
            self.flat_day, weights=self.sizes * (1.0 - decay) / kappa, minlength=total
        )
        p = p.reshape(self.s_count, self.n_days)
        r = r.reshape(self.s_count, self.n_days)
        drive = np.empty_like(p)
        drive[:, 0] = self.lam0
        drive[:, 1:] = p[:, :-1]
        v = lfilter([1.0], [1.0, -math.exp(-kappa)], drive, axis=1)
        day_mass = self.w_days * (v * (1.0 - math.exp(-kappa)) / kappa + r)
        return day_mass.reshape(self.s_count, self.num_periods, self.dpp).sum(axis=2)

    def q_kappa(self, kappa: float, rho: float, eta: float) -> float:
        """Sample-averaged complete-data log-likelihood terms that move
        with kappa: the conditional Poisson part and the Gamma shape part."""
        m = self.masses(kappa)
        with np.errstate(divide="ignore", invalid="ignore"):
            logm = np.where(m > 0.0, np.log(np.maximum(m, 1e-300)), -np.inf)
        cond = -m.sum(axis=1) + (self.counts * logm).sum(axis=1)
        shape = rho / kappa
        lam0 = np.maximum(self.lam0, 1e-300)
        gam = (
            (shape - 1.0) * np.log(lam0)
            - eta * self.lam0
            + shape * math.log(eta)
            - math.lgamma(shape)
        )
        return float(np.mean(cond + gam))


def _golden_max(f, lo: float, hi: float, rel_tol: float = 1e-6) -> float:
    """Golden-section maximiser on a log-scaled bracket."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(lo), math.log(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    while (b - a) > rel_tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(math.exp(d))
    return math.exp(0.5 * (a + b))


def _rho_closed_form(estats: _MarginalEStats) -> float:
    return float(estats.ns.mean()) / estats.horizon


def _eta_closed_form(estats: _MarginalEStats, rho: float, kappa: float) -> float:
    num = float(estats.ns.mean()) + rho / kappa
    den = float(estats.sum_x.mean()) + float(estats.lam0.mean())
    return num / den


def _relative_change(new: float, old: float) -> float:
    return abs(new - old) / abs(old) if old != 0 else math.inf


def fit_marginal(
    panel: CountsPanel,
    exposure: ExposureSeries,
    config: EmConfig,
    rng: np.random.Generator,
    margin: int = 0,
    initial_params: MarginalShotParams | None = None,
) -> MarginalFit:
    """MCEM fit of one margin's shot-noise triple.

    The E-step filters the margin's counts at the current parameters; the
    chain warm-starts from the previous E-step's final state.
    """
    sub_panel = CountsPanel(panel.counts[margin : margin + 1], panel.delta)
    sub_exposure = ExposureSeries(exposure.values[margin : margin + 1])
    p = initial_params or moment_match_marginal(panel, exposure, margin)
    p0 = p

    warm: Trajectory | None = None
    trace: list[dict] = []
    flagged: list[int] = []
    fcfg = FilterConfig(
        iterations=config.mcmc_iters, burn_fraction=0.5, num_samples=config.num_samples
    )
    result: FilterResult | None = None

    for it in range(config.em_iters):
        size_model = UnivariateExponentialSizes(p.rho, p.eta)
        result = run_filter(
            sub_panel, sub_exposure, (p,), size_model, fcfg, rng, initial=warm
        )
        warm = result.final
        estats = _MarginalEStats(result.samples, sub_panel, sub_exposure, 0)

        rho_new = _rho_closed_form(estats)
        eta_new = _eta_closed_form(estats, rho_new, p.kappa)
        lo = max(p.kappa / 3.0, KAPPA_MIN)
        hi = min(p.kappa * 3.0, KAPPA_MAX)
        try:
            kappa_new = _golden_max(lambda k: estats.q_kappa(k, rho_new, eta_new), lo, hi)
        except (ValueError, FloatingPointError):
            kappa_new = p.kappa
            flagged.append(it)

        trace.append(
            {
                "iteration": it,
                "rho": rho_new,
                "eta": eta_new,
                "kappa": kappa_new,
                "rel_rho": _relative_change(rho_new, p.rho),
                "rel_eta": _relative_change(eta_new, p.eta),
                "rel_kappa": _relative_change(kappa_new, p.kappa),
            }
        )
        p = MarginalShotParams(rho=rho_new, eta=eta_new, kappa=kappa_new)
        warm = replace(warm, decay_rates=(p.kappa,))

    return MarginalFit(
        params=p,
        trace=trace,
        final_trajectory=warm,
        initial_params=p0,
        flagged_iterations=flagged,
    )


# ---------------------------------------------------------------------------
# dependence MCEM (marginals fixed)
# ---------------------------------------------------------------------------

class _CopulaEStats:
    """Pattern-split jump sizes pooled over posterior samples."""

    def __init__(self, samples: Sequence[Trajectory]):
        self.s_count = len(samples)
        self.horizon = samples[0].horizon
        sizes = np.concatenate([s.sizes for s in samples], axis=0)
        both = (sizes[:, 0] > 0.0) & (sizes[:, 1] > 0.0)
        only0 = (sizes[:, 0] > 0.0) & ~both
        only1 = (sizes[:, 1] > 0.0) & ~both
        self.common = sizes[both]
        self.unique0 = sizes[only0, 0]
        self.unique1 = sizes[only1, 1]

    def q_delta(self, delta: float, tails: tuple[MarginalTail, MarginalTail]) -> float:
        """Average complete-data log-likelihood terms that move with delta."""
        from .dependence import _log_clayton, _log1mexp, _softplus

        t1, t2 = tails
        lr1, lr2 = math.log(t1.rho), math.log(t2.rho)
        rho_common = math.exp(_log_clayton(lr1, lr2, delta))
        rho_total = t1.rho + t2.rho - rho_common
        total = -rho_total * self.horizon * self.s_count

        if self.common.size:
            # log of C_12(U1, U2) |U1'| |U2'| summed over common pairs
            lu1 = lr1 - t1.eta * self.common[:, 0]
            lu2 = lr2 - t2.eta * self.common[:, 1]
            log_a = np.logaddexp(-delta * lu1, -delta * lu2)
            total += float(
                np.sum(
                    math.log1p(delta)
                    - (1.0 + 2.0 * delta) / delta * log_a
                    - (1.0 + delta) * (lu1 + lu2)
                )
            )
            total += self.common.shape[0] * (
                math.log(t1.rho * t1.eta) + math.log(t2.rho * t2.eta)
            )
            total -= float(
                t1.eta * self.common[:, 0].sum() + t2.eta * self.common[:, 1].sum()
            )

        for x, own, other, lro, lrx in (
            (self.unique0, t1, t2, lr1, lr2),
            (self.unique1, t2, t1, lr2, lr1),
        ):
            if x.size:
                lu = lro - own.eta * x
                log_d1 = -(1.0 + delta) / delta * _softplus(delta * (lu - lrx))
                total += float(
                    np.sum(math.log(own.rho * own.eta) - own.eta * x + _log1mexp(log_d1))
                )
        return total / self.s_count


def fit_copula(
    panel: CountsPanel,
    exposure: ExposureSeries,
    marginals: Sequence[MarginalShotParams],
    config: EmConfig,
    rng: np.random.Generator,
    initial: Trajectory | None = None,
    initial_delta: float | None = None,
) -> CopulaFit:
    """MCEM fit of the dependence parameter with marginals held fixed.

    ``initial`` is typically the merged univariate filtered trajectories.
    """
    marginals = tuple(marginals)
    if len(marginals) != 2:
        raise NotImplementedError("unimplemented dimension: bivariate only")
    frozen = tuple(marginals)

    if initial_delta is None:
        delta = moment_match_copula(panel, exposure, marginals).delta
    else:
        delta = float(initial_delta)
    delta0 = ClaytonParam(delta)
    tails = (
        MarginalTail(marginals[0].rho, marginals[0].eta),
        MarginalTail(marginals[1].rho, marginals[1].eta),
    )

    warm = initial
    trace: list[dict] = []
    flagged: list[int] = []
    fcfg = FilterConfig(
        iterations=config.mcmc_iters, burn_fraction=0.5, num_samples=config.num_samples
    )
    result: FilterResult | None = None

    for it in range(config.em_iters):
        dep = ClaytonDependence(tails, delta)
        result = run_filter(panel, exposure, marginals, dep, fcfg, rng, initial=warm)
        warm = result.final
        estats = _CopulaEStats(result.samples)
        lo = max(delta / 3.0, DELTA_MIN)
        hi = min(delta * 3.0, DELTA_MAX)
        try:
            delta_new = _golden_max(lambda d: estats.q_delta(d, tails), lo, hi)
        except (ValueError, FloatingPointError):
            delta_new = delta
            flagged.append(it)
        trace.append(
            {
                "iteration": it,
                "delta": delta_new,
                "rel_delta": _relative_change(delta_new, delta),
            }
        )
        delta = delta_new

    assert tuple(marginals) == frozen, "marginal parameters must not change"
    return CopulaFit(
        param=ClaytonParam(delta),
        trace=trace,
        final_trajectory=result.final,
        samples=result.samples,
        initial_param=delta0,
        flagged_iterations=flagged,
    )
