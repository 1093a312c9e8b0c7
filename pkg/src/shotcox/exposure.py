"""Risk-exposure construction from policy counts and calendar covariates.

Daily claim counts are detrended with a log-link Poisson regression,

    log E[N(day)] = log(policies in force) + x(day) . a,

fitted by iteratively reweighted least squares with the log policy count as
offset.  The covariates are calendar features: day-of-week indicators, a
month encoding (grouped indicators or a linear day-of-year spline, chosen
by AIC), holiday indicators and a linear trend.  The exposure series is

    W(day) = policies(day) * exp(x(day) . a  minus the intercept term),

the intercept being left to the stationary level of the latent intensity so
W stays a pure relative modifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .counts import ExposureSeries

__all__ = [
    "CalendarDesign",
    "GlmFit",
    "build_calendar_design",
    "fit_poisson_glm",
    "select_month_encoding",
    "build_exposure",
]

MONTH_DAY_STARTS = np.array([0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334])


@dataclass(frozen=True)
class CalendarDesign:
    """Daily design matrix with named columns, intercept first."""

    dates: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)
    columns: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.matrix.shape != (self.dates.size, len(self.columns)):
            raise ValueError("matrix shape inconsistent with dates/columns")
        rank = np.linalg.matrix_rank(self.matrix)
        if rank < len(self.columns):
            # QR pivoting identifies which columns fail to add rank
            _, r = np.linalg.qr(self.matrix)
            diag = np.abs(np.diag(r))
            bad = [self.columns[i] for i in np.where(diag < 1e-8 * diag.max())[0]]
            raise ValueError(f"design is rank deficient; collinear columns: {bad}")

    @property
    def num_params(self) -> int:
        return len(self.columns)


def _weekday(dates: np.ndarray) -> np.ndarray:
    # 0 = Monday; the epoch day 1970-01-01 was a Thursday
    return (dates.astype("datetime64[D]").view("int64") + 3) % 7


def _month(dates: np.ndarray) -> np.ndarray:
    return dates.astype("datetime64[M]").view("int64") % 12 + 1


def _day_of_year(dates: np.ndarray) -> np.ndarray:
    years = dates.astype("datetime64[Y]")
    return (dates - years).view("int64")


def build_calendar_design(
    dates: Sequence,
    day_of_week: bool = True,
    month_encoding: str = "grouped",
    month_groups: Sequence[Sequence[int]] | None = None,
    holidays: Sequence = (),
    trend: str = "days",
) -> CalendarDesign:
    """Assemble the calendar covariate matrix for a run of days.

    month_encoding: "grouped" (indicator per month group, first group is the
    baseline; default one group per month with January the baseline),
    "spline" (linear day-of-year spline with knots at month starts) or
    "none".  trend: "days" (centred linear day index) or "none".
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    n = dates.size
    cols: list[np.ndarray] = [np.ones(n)]
    names: list[str] = ["intercept"]

    if day_of_week:
        wd = _weekday(dates)
        day_names = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")
        for d in range(1, 7):
            cols.append((wd == d).astype(float))
            names.append(f"dow_{day_names[d]}")

    if month_encoding == "grouped":
        months = _month(dates)
        if month_groups is None:
            month_groups = [[m] for m in range(1, 13)]
        seen = sorted(m for grp in month_groups for m in grp)
        if seen != list(range(1, 13)):
            raise ValueError("month groups must partition 1..12")
        for grp in month_groups[1:]:
            mask = np.isin(months, list(grp)).astype(float)
            names.append("month_grp_" + "_".join(str(m) for m in grp))
            cols.append(mask)
    elif month_encoding == "spline":
        doy = _day_of_year(dates).astype(float)
        cols.append(doy / 365.0)
        names.append("doy")
        for k in MONTH_DAY_STARTS[1:]:
            cols.append(np.maximum(doy - float(k), 0.0) / 365.0)
            names.append(f"doy_knot_{int(k)}")
    elif month_encoding != "none":
        raise ValueError(f"unknown month encoding {month_encoding!r}")

    if len(holidays):
        hset = np.asarray(list(holidays), dtype="datetime64[D]")
        cols.append(np.isin(dates, hset).astype(float))
        names.append("holiday")

    if trend == "days":
        t = np.arange(n, dtype=float)
        cols.append(t - t.mean())
        names.append("trend_days")
    elif trend != "none":
        raise ValueError(f"unknown trend option {trend!r}")

    return CalendarDesign(dates, np.column_stack(cols), tuple(names))


@dataclass
class GlmFit:
    """Poisson log-link fit: coefficients on the design's original scale."""

    design: CalendarDesign
    coefficients: np.ndarray
    deviance: float
    aic: float
    fitted: np.ndarray
    coef_cov: np.ndarray
    converged: bool
    n_iter: int

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.design.columns.index(name)])

    def se(self, name: str) -> float:
        i = self.design.columns.index(name)
        return float(math.sqrt(self.coef_cov[i, i]))


def _poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def fit_poisson_glm(
    daily_counts: np.ndarray,
    offset: np.ndarray,
    design: CalendarDesign,
    max_iter: int = 100,
    grad_tol: float = 1e-8,
) -> GlmFit:
    """IRLS fit of the log-link Poisson regression with a fixed offset.

    Convergence is declared at score norm below grad_tol; the step is halved
    whenever the deviance would increase.  Columns are rescaled internally
    for conditioning and the coefficients mapped back.
    """
    y = np.asarray(daily_counts, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if y.shape != offset.shape or y.size != design.dates.size:
        raise ValueError("counts, offset and design must align")
    if np.any(y < 0) or not np.all(np.isfinite(offset)):
        raise ValueError("counts must be non-negative and offsets finite")

    x_raw = design.matrix
    scale = np.max(np.abs(x_raw), axis=0)
    scale[scale == 0.0] = 1.0
    x = x_raw / scale

    p = x.shape[1]
    beta = np.zeros(p)
    base = max(float(np.mean(y / np.exp(offset))), 1e-12)
    beta[0] = math.log(base) * scale[0]  # intercept column is all ones

    def mu_of(b):
        return np.exp(np.clip(x @ b + offset, -700.0, 700.0))

    mu = mu_of(beta)
    dev = _poisson_deviance(y, mu)
    it = 0
    for it in range(1, max_iter + 1):
        grad = x.T @ (y - mu)
        if np.max(np.abs(grad)) < grad_tol:
            break
        xtwx = (x * mu[:, None]).T @ x
        try:
            step = np.linalg.solve(xtwx, grad)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular working information matrix: {exc}") from exc
        newbeta = beta + step
        newmu = mu_of(newbeta)
        newdev = _poisson_deviance(y, newmu)
        halvings = 0
        while newdev > dev + 1e-12 and halvings < 40:
            step *= 0.5
            newbeta = beta + step
            newmu = mu_of(newbeta)
            newdev = _poisson_deviance(y, newmu)
            halvings += 1
        beta, mu, dev = newbeta, newmu, newdev

    grad = x.T @ (y - mu)
    converged = bool(np.max(np.abs(grad)) < grad_tol)
    xtwx = (x * mu[:, None]).T @ x
    cov_scaled = np.linalg.inv(xtwx)

    coefficients = beta / scale
    coef_cov = cov_scaled / np.outer(scale, scale)
    # AIC on the deviance scale: differs from -2 loglik + 2p by a data-only
    # constant, so model ordering is identical
    aic = dev + 2.0 * p
    return GlmFit(
        design=design,
        coefficients=coefficients,
        deviance=dev,
        aic=aic,
        fitted=mu,
        coef_cov=coef_cov,
        converged=converged,
        n_iter=it,
    )


def select_month_encoding(
    daily_counts: np.ndarray,
    offset: np.ndarray,
    candidates: Sequence[CalendarDesign],
) -> GlmFit:
    """Fit every candidate design and keep the smallest AIC.

    Ties go to the design with fewer parameters.
    """
    if len(candidates) < 2:
        raise ValueError("at least two candidate designs required")
    fits = [fit_poisson_glm(daily_counts, offset, d) for d in candidates]
    return min(fits, key=lambda f: (round(f.aic, 9), f.design.num_params))


def build_exposure(policy_counts: np.ndarray, fit: GlmFit) -> ExposureSeries:
    """Exposure series W(day) = policies(day) * exp(covariate effects).

    The intercept is excluded: the overall level belongs to the stationary
    intensity, leaving W a relative modifier.
    """
    policy_counts = np.asarray(policy_counts, dtype=float)
    if policy_counts.size != fit.design.dates.size:
        raise ValueError("policy counts must align with the fitted design")
    if np.any(policy_counts <= 0):
        raise ValueError("exposure requires positive policy counts every day")
    linpred = fit.design.matrix[:, 1:] @ fit.coefficients[1:]
    return ExposureSeries((policy_counts * np.exp(linpred))[None, :])
