"""Count panels, exposure-weighted masses and the two log-likelihoods."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from shotcox.shotnoise import MarginalShotParams, Trajectory
from shotcox.dependence import ClaytonDependence, UnivariateExponentialSizes
from shotcox.counts import (
    CountsPanel,
    ExposureSeries,
    exposure_weighted_mass,
    gamma_logpdf,
    log_conditional,
    log_prior,
    masses_for_trajectory,
    poisson_count_logprob,
    simulate_counts,
)

from conftest import TAILS_BENCH, DELTA_BENCH, make_rng


def single_margin_traj(lam0, times, sizes, horizon, kappa):
    times = np.asarray(times, dtype=float)
    sizes = np.asarray(sizes, dtype=float).reshape(-1, 1)
    return Trajectory((lam0,), times, sizes, horizon, (kappa,))


def random_bivariate_traj(seed, horizon=6.0):
    rng = make_rng(seed)
    n = rng.integers(3, 12)
    times = np.sort(rng.uniform(0, horizon, size=n))
    sizes = rng.exponential(1.0, size=(n, 2))
    pattern = rng.integers(0, 3, size=n)
    sizes[pattern == 0, 1] = 0.0
    sizes[pattern == 1, 0] = 0.0
    init = tuple(rng.gamma(2.0, 1.0, size=2))
    return Trajectory(init, times, sizes, horizon, (1.7, 0.6))


class TestPoissonLogprob:
    def test_empty_count(self):
        assert math.exp(poisson_count_logprob(0, 2.0)) == pytest.approx(0.135335, abs=1e-6)

    def test_direct_pmf(self):
        assert math.exp(poisson_count_logprob(2, 1.0)) == pytest.approx(0.183940, abs=1e-6)

    def test_calculator_value(self):
        assert math.exp(poisson_count_logprob(3, 2.5)) == pytest.approx(0.213763, abs=1e-6)

    def test_zero_mass_limits(self):
        assert poisson_count_logprob(0, 0.0) == 0.0
        assert poisson_count_logprob(3, 0.0) == -math.inf

    @given(n=st.integers(0, 200), mass=st.floats(1e-6, 500.0))
    @settings(max_examples=80, deadline=None)
    def test_matches_scipy(self, n, mass):
        assert poisson_count_logprob(n, mass) == pytest.approx(
            stats.poisson.logpmf(n, mass), rel=1e-10, abs=1e-10
        )


class TestExposureWeightedMass:
    def test_unit_exposure_equals_integral(self):
        traj = single_margin_traj(1.4, [0.3, 2.5], [1.0, 0.5], 4.0, 0.9)
        exposure = ExposureSeries.constant([1.0], 4)
        from shotcox.shotnoise import integrated_intensity

        for i in range(4):
            assert exposure_weighted_mass(traj, exposure, 0, i) == pytest.approx(
                integrated_intensity(traj, 0, float(i), float(i + 1)), rel=1e-12
            )

    def test_linear_scaling(self):
        traj = single_margin_traj(1.0, [], [], 2.0, 1.0)
        exposure = ExposureSeries.constant([2.0], 2)
        assert exposure_weighted_mass(traj, exposure, 0, 0) == pytest.approx(
            1.264241, abs=1e-6
        )

    def test_daily_weights_over_two_day_period(self):
        traj = single_margin_traj(1.0, [0.4], [2.0], 2.0, 0.8)
        exposure = ExposureSeries(np.array([[1.0, 2.0]]))
        from shotcox.shotnoise import integrated_intensity

        expected = 1.0 * integrated_intensity(traj, 0, 0.0, 1.0) + 2.0 * integrated_intensity(
            traj, 0, 1.0, 2.0
        )
        got = exposure_weighted_mass(traj, exposure, 0, 0, delta=2.0)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_out_of_range_period(self):
        traj = single_margin_traj(1.0, [], [], 2.0, 1.0)
        exposure = ExposureSeries.constant([1.0], 2)
        with pytest.raises(ValueError):
            exposure_weighted_mass(traj, exposure, 0, 5)


class TestMassesForTrajectory:
    @pytest.mark.parametrize("delta", [1.0, 2.0])
    def test_matches_cellwise_closed_form(self, delta):
        for seed in range(4):
            traj = random_bivariate_traj(seed, horizon=6.0)
            n_days = 6
            rng = make_rng(100 + seed)
            exposure = ExposureSeries(rng.uniform(0.5, 2.0, size=(2, n_days)))
            num_periods = int(6.0 / delta)
            fast = masses_for_trajectory(traj, exposure, num_periods, delta)
            for g in range(2):
                for i in range(num_periods):
                    slow = exposure_weighted_mass(traj, exposure, g, i, delta)
                    assert fast[g, i] == pytest.approx(slow, rel=1e-10)

    def test_fractional_delta_falls_back(self):
        traj = random_bivariate_traj(7, horizon=6.0)
        exposure = ExposureSeries.constant([1.0, 1.0], 6)
        fast = masses_for_trajectory(traj, exposure, 12, 0.5)
        for g in range(2):
            for i in range(12):
                assert fast[g, i] == pytest.approx(
                    exposure_weighted_mass(traj, exposure, g, i, 0.5), rel=1e-10
                )

    def test_exposure_doubling_doubles_masses(self):
        traj = random_bivariate_traj(9)
        e1 = ExposureSeries.constant([1.0, 1.0], 6)
        e2 = ExposureSeries.constant([2.0, 2.0], 6)
        m1 = masses_for_trajectory(traj, e1, 6, 1.0)
        m2 = masses_for_trajectory(traj, e2, 6, 1.0)
        assert np.allclose(m2, 2.0 * m1, rtol=1e-12)


class TestLogConditional:
    def test_all_zero_counts(self):
        traj = random_bivariate_traj(11)
        exposure = ExposureSeries.constant([1.0, 1.0], 6)
        panel = CountsPanel(np.zeros((2, 6), dtype=np.int64))
        masses = masses_for_trajectory(traj, exposure, 6, 1.0)
        assert log_conditional(panel, traj, exposure) == pytest.approx(
            -masses.sum(), rel=1e-12
        )

    def test_single_cell(self):
        traj = single_margin_traj(0.0, [], [], 1.0, 1.0)
        # zero trajectory gives zero mass; use a jump to get mass 1 exactly
        # instead: direct reduction to the pmf with a crafted exposure
        traj = single_margin_traj(1.0, [], [], 1.0, 1.0)
        m = 1.0 - math.exp(-1.0)
        w = 1.0 / m  # scales the mass to exactly 1
        exposure = ExposureSeries(np.array([[w]]))
        panel = CountsPanel(np.array([[2]]))
        assert log_conditional(panel, traj, exposure) == pytest.approx(
            math.log(math.exp(-1.0) / 2.0), rel=1e-12
        )

    def test_equals_sum_of_cell_logprobs(self):
        rng = make_rng(13)
        traj = random_bivariate_traj(13)
        exposure = ExposureSeries(rng.uniform(0.5, 2.0, size=(2, 6)))
        counts = rng.poisson(2.0, size=(2, 5))
        panel = CountsPanel(counts)
        masses = masses_for_trajectory(traj, exposure, 5, 1.0)
        expected = sum(
            poisson_count_logprob(int(counts[g, i]), float(masses[g, i]))
            for g in range(2)
            for i in range(5)
        )
        assert log_conditional(panel, traj, exposure) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        traj = random_bivariate_traj(14)
        exposure = ExposureSeries.constant([1.0, 1.0], 6)
        panel = CountsPanel(np.zeros((3, 6), dtype=np.int64))
        with pytest.raises(ValueError):
            log_conditional(panel, traj, exposure)


class TestLogPrior:
    def test_empty_trajectory_value(self):
        # no jumps, rho = kappa = eta = 1, lam(0) = 1, horizon 1:
        # -rho T - eta lam0 and all other terms vanish
        traj = single_margin_traj(1.0, [], [], 1.0, 1.0)
        params = (MarginalShotParams(1.0, 1.0, 1.0),)
        model = UnivariateExponentialSizes(1.0, 1.0)
        assert log_prior(traj, params, model) == pytest.approx(-2.0, rel=1e-12)

    def test_one_jump_adds_rate_and_density(self):
        params = (MarginalShotParams(1.0, 1.0, 1.0),)
        model = UnivariateExponentialSizes(1.0, 1.0)
        base = single_margin_traj(1.0, [], [], 1.0, 1.0)
        jumped = single_margin_traj(1.0, [0.4], [0.9], 1.0, 1.0)
        got = log_prior(jumped, params, model) - log_prior(base, params, model)
        expected = math.log(1.0) + model.log_density(np.array([0.9]))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_matches_textbook_oracle_bivariate(self):
        # independently coded marked-Poisson + Gamma initial oracle
        dep = ClaytonDependence(TAILS_BENCH, DELTA_BENCH)
        params = (
            MarginalShotParams(33.77, 0.17, 2.37),
            MarginalShotParams(18.74, 0.18, 1.28),
        )
        for seed in range(100):
            traj = random_bivariate_traj(seed, horizon=3.0)
            got = log_prior(traj, params, dep)

            expected = traj.num_jumps * math.log(dep.rho_total) - dep.rho_total * 3.0
            for j in traj.jumps:
                from shotcox.dependence import joint_shot_log_density

                expected += joint_shot_log_density(j, TAILS_BENCH, DELTA_BENCH)
            for g, p in enumerate(params):
                expected += stats.gamma.logpdf(
                    traj.initial_values[g], a=p.rho / p.kappa, scale=1.0 / p.eta
                )
            assert got == pytest.approx(expected, rel=1e-10, abs=1e-10)

    def test_zero_initial_with_shape_above_one(self):
        traj = single_margin_traj(0.0, [0.5], [1.0], 1.0, 1.0)
        params = (MarginalShotParams(2.0, 1.0, 1.0),)
        model = UnivariateExponentialSizes(2.0, 1.0)
        assert log_prior(traj, params, model) == -math.inf


class TestGammaLogpdf:
    @given(
        x=st.floats(1e-4, 50.0),
        shape=st.floats(0.1, 40.0),
        rate=st.floats(0.05, 10.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_matches_scipy(self, x, shape, rate):
        assert gamma_logpdf(x, shape, rate) == pytest.approx(
            stats.gamma.logpdf(x, a=shape, scale=1.0 / rate), rel=1e-9, abs=1e-9
        )


class TestSimulateCounts:
    def test_zero_trajectory_gives_zero_panel(self):
        traj = single_margin_traj(0.0, [], [], 5.0, 1.0)
        exposure = ExposureSeries.constant([1.0], 5)
        panel = simulate_counts(traj, exposure, 5, make_rng(17))
        assert panel.counts.sum() == 0

    def test_replicate_mean_matches_mass(self):
        traj = random_bivariate_traj(19)
        exposure = ExposureSeries.constant([1.0, 1.0], 6)
        masses = masses_for_trajectory(traj, exposure, 6, 1.0)
        rng = make_rng(19)
        reps = np.stack(
            [simulate_counts(traj, exposure, 6, rng).counts for _ in range(20000)]
        )
        mean = reps.mean(axis=0)
        se = np.sqrt(np.maximum(masses, 1e-12) / 20000)
        assert np.all(np.abs(mean - masses) < 3 * se + 1e-9)

    def test_margins_conditionally_uncorrelated(self):
        traj = random_bivariate_traj(23)
        exposure = ExposureSeries.constant([1.0, 1.0], 6)
        rng = make_rng(23)
        reps = np.stack(
            [simulate_counts(traj, exposure, 6, rng).counts for _ in range(20000)]
        )
        # correlation of the two margins' totals across replicates
        t0 = reps[:, 0, :].sum(axis=1).astype(float)
        t1 = reps[:, 1, :].sum(axis=1).astype(float)
        corr = np.corrcoef(t0, t1)[0, 1]
        assert abs(corr) < 3.0 / math.sqrt(20000)


class TestPanelValidation:
    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            CountsPanel(np.array([[-1, 2]]))

    def test_non_integer_rejected(self):
        with pytest.raises(ValueError):
            CountsPanel(np.array([[0.5, 2.0]]))

    def test_exposure_positive(self):
        with pytest.raises(ValueError):
            ExposureSeries(np.array([[1.0, 0.0]]))
