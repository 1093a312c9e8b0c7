"""Pipeline stage orchestration.

Stages write plain CSV artifacts plus a JSON manifest into the output
directory; later stages read earlier artifacts and refuse to run when a
required one is missing.  All randomness derives from the config seed and a
per-stage index, so a rerun with the same seed reproduces every artifact
byte for byte.

    simulate      synthetic claims.csv / exposure.csv pair (plus truth)
    fit-glm       calendar GLM per margin, exposure_series.csv
    fit-marginal  per-margin MCEM shot-noise fits
    fit-copula    dependence parameter MCEM with marginals fixed
    filter        joint posterior trajectory sample and cell masses
    diagnose      residuals, ACFs, residual copula, decomposition
    predict       future count totals and dependency measures
"""

from __future__ import annotations

import math
import os

import numpy as np

from .calibration import (
    EmConfig,
    FitResult,
    fit_copula,
    fit_marginal,
    merge_marginal_trajectories,
)
from .config import ConfigError, RunConfig
from .counts import ExposureSeries, masses_for_trajectory, simulate_counts
from .dependence import ClaytonDependence, ClaytonParam, MarginalTail, UnivariateExponentialSizes
from .diagnostics import (
    acf,
    decompose_contributions,
    dependency_measures,
    empirical_copula,
    pearson_residuals,
    predict,
)
from .exposure import build_calendar_design, build_exposure, fit_poisson_glm, select_month_encoding
from .filtering import FilterConfig, run_filter
from .io import (
    DataError,
    ingest,
    read_claims_csv,
    read_csv_rows,
    read_exposure_csv,
    write_claims_csv,
    write_csv,
    write_exposure_csv,
    write_manifest,
)
from .shotnoise import MarginalShotParams, Trajectory, simulate_trajectory

__all__ = ["StageDependencyError", "STAGES", "run_pipeline"]


class StageDependencyError(RuntimeError):
    """A stage was invoked before the stage that produces its inputs."""


STAGES = (
    "simulate",
    "fit-glm",
    "fit-marginal",
    "fit-copula",
    "filter",
    "diagnose",
    "predict",
)


def _stage_rng(config: RunConfig, stage: str, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng([config.seed, STAGES.index(stage), extra])


def _path(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, name)


def _require(out_dir: str, names: list[str], needed_by: str, producer: str) -> list[str]:
    missing = [n for n in names if not os.path.exists(_path(out_dir, n))]
    if missing:
        raise StageDependencyError(
            f"stage {needed_by!r} needs {missing} from stage {producer!r}; run it first"
        )
    return [_path(out_dir, n) for n in names]


def _claims_exposure_paths(config: RunConfig, out_dir: str) -> tuple[str, str]:
    claims = config.claims_file or _path(out_dir, "claims.csv")
    exposure = config.exposure_file or _path(out_dir, "exposure.csv")
    for p, kind in ((claims, "claims"), (exposure, "exposure")):
        if not os.path.exists(p):
            raise StageDependencyError(
                f"{kind} file {p!r} not found; run 'simulate' or point "
                f"{kind}_file at your data"
            )
    return claims, exposure


def _ingest(config: RunConfig, out_dir: str):
    claims_path, exposure_path = _claims_exposure_paths(config, out_dir)
    result = ingest(read_claims_csv(claims_path), read_exposure_csv(exposure_path), config)
    return result, [claims_path, exposure_path]


def _size_model(params, delta):
    if len(params) == 1:
        return UnivariateExponentialSizes(params[0].rho, params[0].eta)
    tails = tuple(MarginalTail(p.rho, p.eta) for p in params)
    return ClaytonDependence(tails, delta)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _stage_simulate(config: RunConfig, out_dir: str, config_text: str) -> list[str]:
    rng = _stage_rng(config, "simulate")
    g_count = len(config.margins)
    for key in ("sim_rho", "sim_eta", "sim_kappa", "sim_policies"):
        if len(getattr(config, key)) != g_count:
            raise ConfigError(f"{key} must list one value per margin")
    params = tuple(
        MarginalShotParams(r, e, k)
        for r, e, k in zip(config.sim_rho, config.sim_eta, config.sim_kappa)
    )
    model = _size_model(params, config.sim_delta)
    dates = config.dates
    n_days = dates.size
    horizon = n_days * 1.0
    traj = simulate_trajectory(params, model, horizon, rng)
    policies = np.tile(np.asarray(config.sim_policies)[:, None], (1, n_days))
    exposure = ExposureSeries(policies)
    num_periods = int(round(horizon / config.delta))
    panel = simulate_counts(traj, exposure, num_periods, rng, config.delta)

    claims_path = _path(out_dir, "claims.csv")
    rows = []
    dpp = int(round(config.delta))
    for g, margin in enumerate(config.margins):
        for i in range(num_periods):
            day = dates[min(i * dpp, n_days - 1)]
            rows.extend([(day, margin)] * int(panel.counts[g, i]))
    rows.sort(key=lambda r: (str(r[0]), r[1]))
    write_claims_csv(claims_path, rows)

    exposure_path = _path(out_dir, "exposure.csv")
    write_exposure_csv(exposure_path, dates, config.margins, policies)

    truth_path = _path(out_dir, "sim_truth.csv")
    truth_rows = [
        (margin, p.rho, p.eta, p.kappa) for margin, p in zip(config.margins, params)
    ]
    write_csv(truth_path, ["margin", "rho", "eta", "kappa"], truth_rows)

    masses = masses_for_trajectory(traj, exposure, num_periods, config.delta)
    masses_path = _path(out_dir, "sim_masses.csv")
    write_csv(
        masses_path,
        ["date", "margin", "mass"],
        [
            (str(dates[i * dpp]), config.margins[g], float(masses[g, i]))
            for g in range(g_count)
            for i in range(num_periods)
        ],
    )
    outputs = [claims_path, exposure_path, truth_path, masses_path]
    write_manifest(out_dir, "simulate", config.seed, config_text, [], outputs)
    return outputs


def _candidate_designs(config: RunConfig, dates: np.ndarray):
    kwargs = dict(
        day_of_week=config.glm_day_of_week,
        holidays=config.holidays,
        trend=config.glm_trend,
    )

    def grouped():
        return build_calendar_design(
            dates, month_encoding="grouped", month_groups=config.glm_month_groups, **kwargs
        )

    if config.glm_month_encoding == "grouped":
        return [grouped()]
    if config.glm_month_encoding == "spline":
        return [build_calendar_design(dates, month_encoding="spline", **kwargs)]
    if config.glm_month_encoding == "none":
        return [build_calendar_design(dates, month_encoding="none", **kwargs)]
    return [grouped(), build_calendar_design(dates, month_encoding="spline", **kwargs)]


def _stage_fit_glm(config: RunConfig, out_dir: str, config_text: str) -> list[str]:
    data, inputs = _ingest(config, out_dir)
    coeff_rows = []
    w_all = np.empty_like(data.policy_counts)
    for g, margin in enumerate(config.margins):
        y = data.panel.counts[g].astype(float)
        if abs(config.delta - 1.0) > 1e-12:
            raise ConfigError("fit-glm requires daily panels (delta = 1)")
        offset = np.log(data.policy_counts[g])
        candidates = _candidate_designs(config, data.dates)
        if len(candidates) == 1:
            fit = fit_poisson_glm(y, offset, candidates[0])
        else:
            fit = select_month_encoding(y, offset, candidates)
        for name, est in zip(fit.design.columns, fit.coefficients):
            coeff_rows.append((margin, name, float(est), fit.se(name)))
        w_all[g] = build_exposure(data.policy_counts[g], fit).values[0]

    coeff_path = _path(out_dir, "glm_coefficients.csv")
    write_csv(coeff_path, ["margin", "column", "estimate", "se"], coeff_rows)
    series_path = _path(out_dir, "exposure_series.csv")
    write_csv(
        series_path,
        ["date", "margin", "exposure"],
        [
            (str(data.dates[d]), margin, float(w_all[g, d]))
            for g, margin in enumerate(config.margins)
            for d in range(data.dates.size)
        ],
    )
    outputs = [coeff_path, series_path]
    write_manifest(out_dir, "fit-glm", config.seed, config_text, inputs, outputs)
    return outputs


def _read_exposure_series(config: RunConfig, out_dir: str) -> ExposureSeries:
    header, rows = read_csv_rows(_path(out_dir, "exposure_series.csv"))
    idx = {m: g for g, m in enumerate(config.margins)}
    n_days = config.num_days
    w = np.full((len(config.margins), n_days), np.nan)
    start = config.window_start
    for date_s, margin, value in rows:
        d = int((np.datetime64(date_s, "D") - start).astype(int))
        if margin in idx and 0 <= d < n_days:
            w[idx[margin], d] = float(value)
    if np.any(np.isnan(w)):
        raise DataError("exposure_series.csv does not cover the window")
    return ExposureSeries(w)


def _em_config(config: RunConfig) -> EmConfig:
    return EmConfig(
        em_iters=config.em_iters,
        mcmc_iters=config.mcmc_iters,
        num_samples=config.em_samples,
    )


def _stage_fit_marginal(config: RunConfig, out_dir: str, config_text: str) -> list[str]:
    inputs = _require(out_dir, ["exposure_series.csv"], "fit-marginal", "fit-glm")
    data, data_inputs = _ingest(config, out_dir)
    exposure = _read_exposure_series(config, out_dir)
    cfg = _em_config(config)

    param_rows = []
    trace_rows = []
    traj_rows = []
    for g, margin in enumerate(config.margins):
        rng = _stage_rng(config, "fit-marginal", extra=g)
        fit = fit_marginal(data.panel, exposure, cfg, rng, margin=g)
        p = fit.params
        final = fit.final_trajectory
        param_rows.append(
            (
                margin,
                p.rho,
                p.eta,
                p.kappa,
                float(final.initial_values[0]),
                fit.initial_params.rho,
                fit.initial_params.eta,
                fit.initial_params.kappa,
            )
        )
        for row in fit.trace:
            for name in ("rho", "eta", "kappa"):
                trace_rows.append(
                    (margin, row["iteration"], name, row[name], row[f"rel_{name}"])
                )
        for t, x in zip(final.times, final.sizes[:, 0]):
            traj_rows.append((margin, float(t), float(x)))

    params_path = _path(out_dir, "marginal_params.csv")
    write_csv(
        params_path,
        ["margin", "rho", "eta", "kappa", "lam0_final", "rho0", "eta0", "kappa0"],
        param_rows,
    )
    trace_path = _path(out_dir, "em_trace_marginal.csv")
    write_csv(trace_path, ["margin", "iteration", "parameter", "value", "rel_change"], trace_rows)
    traj_path = _path(out_dir, "marginal_trajectories.csv")
    write_csv(traj_path, ["margin", "time", "size"], traj_rows)

    outputs = [params_path, trace_path, traj_path]
    write_manifest(
        out_dir, "fit-marginal", config.seed, config_text, inputs + data_inputs, outputs
    )
    return outputs


def _read_marginal_artifacts(config: RunConfig, out_dir: str):
    _, rows = read_csv_rows(_path(out_dir, "marginal_params.csv"))
    by_margin = {r[0]: r for r in rows}
    params = []
    lam0 = []
    for margin in config.margins:
        if margin not in by_margin:
            raise DataError(f"marginal_params.csv lacks margin {margin!r}")
        r = by_margin[margin]
        params.append(MarginalShotParams(float(r[1]), float(r[2]), float(r[3])))
        lam0.append(float(r[4]))
    _, traj_rows = read_csv_rows(_path(out_dir, "marginal_trajectories.csv"))
    horizon = config.num_days * 1.0
    trajs = []
    for g, margin in enumerate(config.margins):
        times = np.array([float(r[1]) for r in traj_rows if r[0] == margin])
        sizes = np.array([float(r[2]) for r in traj_rows if r[0] == margin]).reshape(-1, 1)
        order = np.argsort(times)
        trajs.append(
            Trajectory((lam0[g],), times[order], sizes[order], horizon, (params[g].kappa,))
        )
    return tuple(params), trajs


def _stage_fit_copula(config: RunConfig, out_dir: str, config_text: str) -> list[str]:
    inputs = _require(
        out_dir,
        ["marginal_params.csv", "marginal_trajectories.csv", "exposure_series.csv"],
        "fit-copula",
        "fit-marginal",
    )
    if len(config.margins) != 2:
        raise ConfigError("fit-copula requires exactly two margins")
    data, data_inputs = _ingest(config, out_dir)
    exposure = _read_exposure_series(config, out_dir)
    params, trajs = _read_marginal_artifacts(config, out_dir)
    merged = merge_marginal_trajectories(trajs, config.merge_threshold)
    rng = _stage_rng(config, "fit-copula")
    fit = fit_copula(data.panel, exposure, params, _em_config(config), rng, initial=merged)

    param_path = _path(out_dir, "copula_param.csv")
    write_csv(
        param_path,
        ["parameter", "value"],
        [("delta", fit.param.delta), ("delta_initial", fit.initial_param.delta)],
    )
    trace_path = _path(out_dir, "em_trace_copula.csv")
    write_csv(
        trace_path,
        ["iteration", "parameter", "value", "rel_change"],
        [(r["iteration"], "delta", r["delta"], r["rel_delta"]) for r in fit.trace],
    )
    outputs = [param_path, trace_path]
    write_manifest(
        out_dir, "fit-copula", config.seed, config_text, inputs + data_inputs, outputs
    )
    return outputs


def _read_delta(out_dir: str) -> float:
    _, rows = read_csv_rows(_path(out_dir, "copula_param.csv"))
    for name, value in rows:
        if name == "delta":
            return float(value)
    raise DataError("copula_param.csv lacks a delta row")


def _stage_filter(config: RunConfig, out_dir: str, config_text: str) -> list[str]:
    inputs = _require(
        out_dir,
        ["marginal_params.csv", "marginal_trajectories.csv", "copula_param.csv",
         "exposure_series.csv"],
        "filter",
        "fit-copula",
    )
    data, data_inputs = _ingest(config, out_dir)
    exposure = _read_exposure_series(config, out_dir)
    params, trajs = _read_marginal_artifacts(config, out_dir)
    delta = _read_delta(out_dir)
    dep = _size_model(params, delta)
    merged = merge_marginal_trajectories(trajs, config.merge_threshold)
    fcfg = FilterConfig(
        iterations=config.filter_iterations,
        burn_fraction=config.burn_fraction,
        num_samples=config.filter_samples,
    )
    rng = _stage_rng(config, "filter")
    result = run_filter(data.panel, exposure, params, dep, fcfg, rng, initial=merged)

    num_periods = data.panel.num_periods
    sample_masses = np.stack(
        [masses_for_trajectory(s, exposure, num_periods, config.delta) for s in result.samples]
    )
    mean = sample_masses.mean(axis=0)
    q05 = np.quantile(sample_masses, 0.05, axis=0)
    q95 = np.quantile(sample_masses, 0.95, axis=0)
    dpp = int(round(config.delta))
    masses_path = _path(out_dir, "posterior_masses.csv")
    write_csv(
        masses_path,
        ["date", "margin", "mean", "q05", "q95"],
        [
            (
                str(data.dates[i * dpp]),
                margin,
                float(mean[g, i]),
                float(q05[g, i]),
                float(q95[g, i]),
            )
            for g, margin in enumerate(config.margins)
            for i in range(num_periods)
        ],
    )

    jumps_path = _path(out_dir, "posterior_jumps.csv")
    size_cols = [f"size_{m}" for m in config.margins]
    jump_rows = []
    for k, s in enumerate(result.samples):
        for j in range(s.num_jumps):
            jump_rows.append((k, float(s.times[j]), *[float(v) for v in s.sizes[j]]))
    write_csv(jumps_path, ["sample", "time", *size_cols], jump_rows)

    initials_path = _path(out_dir, "posterior_initials.csv")
    write_csv(
        initials_path,
        ["sample", "margin", "value"],
        [
            (k, margin, float(s.initial_values[g]))
            for k, s in enumerate(result.samples)
            for g, margin in enumerate(config.margins)
        ],
    )
    outputs = [masses_path, jumps_path, initials_path]
    write_manifest(out_dir, "filter", config.seed, config_text, inputs + data_inputs, outputs)
    return outputs


def _read_posterior_samples(config: RunConfig, out_dir: str, params) -> list[Trajectory]:
    _, jump_rows = read_csv_rows(_path(out_dir, "posterior_jumps.csv"))
    _, init_rows = read_csv_rows(_path(out_dir, "posterior_initials.csv"))
    horizon = config.num_days * 1.0
    decay = tuple(p.kappa for p in params)
    idx = {m: g for g, m in enumerate(config.margins)}
    initials: dict[int, list[float]] = {}
    for sample, margin, value in init_rows:
        initials.setdefault(int(sample), [0.0] * len(config.margins))[idx[margin]] = float(value)
    jumps: dict[int, list] = {k: [] for k in initials}
    for row in jump_rows:
        k = int(row[0])
        jumps.setdefault(k, []).append([float(v) for v in row[1:]])
    out = []
    for k in sorted(initials):
        arr = np.array(jumps.get(k, []), dtype=float).reshape(-1, 1 + len(config.margins))
        order = np.argsort(arr[:, 0]) if arr.size else np.empty(0, dtype=int)
        out.append(
            Trajectory(
                tuple(initials[k]),
                arr[order, 0] if arr.size else np.empty(0),
                arr[order, 1:] if arr.size else np.empty((0, len(config.margins))),
                horizon,
                decay,
            )
        )
    return out


def _read_posterior_mean_masses(config: RunConfig, out_dir: str, num_periods: int) -> np.ndarray:
    _, rows = read_csv_rows(_path(out_dir, "posterior_masses.csv"))
    idx = {m: g for g, m in enumerate(config.margins)}
    out = np.full((len(config.margins), num_periods), np.nan)
    start = config.window_start
    dpp = int(round(config.delta))
    for date_s, margin, mean, _q05, _q95 in rows:
        i = int((np.datetime64(date_s, "D") - start).astype(int)) // dpp
        out[idx[margin], i] = float(mean)
    if np.any(np.isnan(out)):
        raise DataError("posterior_masses.csv does not cover the panel")
    return out


def _fit_result_from_artifacts(config: RunConfig, out_dir: str) -> FitResult:
    params, _ = _read_marginal_artifacts(config, out_dir)
    delta = _read_delta(out_dir)
    return FitResult(
        marginal_params=params,
        clayton=ClaytonParam(delta),
        marginal_traces=tuple([] for _ in params),
        copula_trace=[],
        posterior_samples=[],
    )


def _stage_diagnose(config: RunConfig, out_dir: str, config_text: str) -> list[str]:
    inputs = _require(
        out_dir,
        ["posterior_masses.csv", "posterior_jumps.csv", "posterior_initials.csv"],
        "diagnose",
        "filter",
    )
    data, data_inputs = _ingest(config, out_dir)
    fit = _fit_result_from_artifacts(config, out_dir)
    masses = _read_posterior_mean_masses(config, out_dir, data.panel.num_periods)
    residuals = pearson_residuals(data.panel, masses)

    dpp = int(round(config.delta))
    residuals_path = _path(out_dir, "residuals.csv")
    write_csv(
        residuals_path,
        ["date", "margin", "residual"],
        [
            (str(data.dates[i * dpp]), margin, float(residuals.values[g, i]))
            for g, margin in enumerate(config.margins)
            for i in range(data.panel.num_periods)
        ],
    )

    max_lag = min(20, data.panel.num_periods - 1)
    acf_rows = []
    for g, margin in enumerate(config.margins):
        res = acf(residuals.values[g], max_lag)
        for lag in range(max_lag + 1):
            acf_rows.append((margin, lag, float(res.values[lag]), res.band))
    acf_path = _path(out_dir, "acf_residuals.csv")
    write_csv(acf_path, ["margin", "lag", "value", "band"], acf_rows)

    outputs = [residuals_path, acf_path]
    if len(config.margins) == 2:
        k = max(2, min(10, int(math.isqrt(data.panel.num_periods // 5)) or 2))
        grid = empirical_copula(residuals.values[0], residuals.values[1], k)
        grid_path = _path(out_dir, "residual_copula_grid.csv")
        write_csv(
            grid_path,
            ["row", "col", "count"],
            [
                (i, j, int(grid.counts[i, j]))
                for i in range(k)
                for j in range(k)
            ],
        )
        outputs.append(grid_path)

        samples = _read_posterior_samples(config, out_dir, fit.marginal_params)
        decomp = decompose_contributions(samples, fit)
        decomp_path = _path(out_dir, "decomposition.csv")
        write_csv(
            decomp_path,
            ["margin", "unique_pct", "common_pct"],
            [
                (config.margins[row["margin"]], row["unique_pct"], row["common_pct"])
                for row in decomp
            ],
        )
        outputs.append(decomp_path)

    write_manifest(out_dir, "diagnose", config.seed, config_text, inputs + data_inputs, outputs)
    return outputs


def _stage_predict(config: RunConfig, out_dir: str, config_text: str) -> list[str]:
    inputs = _require(
        out_dir,
        ["posterior_jumps.csv", "posterior_initials.csv", "marginal_params.csv",
         "copula_param.csv", "exposure_series.csv"],
        "predict",
        "filter",
    )
    fit = _fit_result_from_artifacts(config, out_dir)
    exposure = _read_exposure_series(config, out_dir)
    samples = _read_posterior_samples(config, out_dir, fit.marginal_params)
    last = samples[-1]
    w_last = exposure.values[:, -1]  # constant forward exposure
    rng = _stage_rng(config, "predict")
    pred = predict(fit, last, w_last, config.predict_horizon, config.predict_n_sims, rng)

    totals_path = _path(out_dir, "prediction_totals.csv")
    write_csv(
        totals_path,
        ["sim", *[f"total_{m}" for m in config.margins]],
        [(i, *[int(v) for v in pred.totals[i]]) for i in range(pred.n_sims)],
    )
    measures_path = _path(out_dir, "dependency_measures.csv")
    measures = dependency_measures(pred) if len(config.margins) == 2 else {}
    write_csv(
        measures_path,
        ["measure", "value"],
        [(k, float(v)) for k, v in measures.items()],
    )
    outputs = [totals_path, measures_path]
    write_manifest(out_dir, "predict", config.seed, config_text, inputs, outputs)
    return outputs


_STAGE_FUNCS = {
    "simulate": _stage_simulate,
    "fit-glm": _stage_fit_glm,
    "fit-marginal": _stage_fit_marginal,
    "fit-copula": _stage_fit_copula,
    "filter": _stage_filter,
    "diagnose": _stage_diagnose,
    "predict": _stage_predict,
}


def run_pipeline(
    subcommand: str,
    config: RunConfig,
    out_dir: str,
    config_text: str = "",
) -> list[str]:
    """Run one stage; returns the list of artifact paths it wrote."""
    if subcommand not in _STAGE_FUNCS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {STAGES}")
    os.makedirs(out_dir, exist_ok=True)
    return _STAGE_FUNCS[subcommand](config, out_dir, config_text)
