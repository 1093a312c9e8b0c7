"""Shot-noise path evaluation, exact integrals and simulation moments."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from shotcox.shotnoise import (
    JumpEvent,
    MarginalShotParams,
    Trajectory,
    integrated_intensity,
    intensity_at,
    intensity_on_grid,
    sample_stationary_initial,
    simulate_trajectory,
    theoretical_cov,
)
from shotcox.dependence import ClaytonDependence

from conftest import PARAMS_A, PARAMS_B, TAILS_BENCH, DELTA_BENCH, make_rng


def single_margin_traj(lam0, times, sizes, horizon, kappa):
    times = np.asarray(times, dtype=float)
    sizes = np.asarray(sizes, dtype=float).reshape(-1, 1)
    return Trajectory((lam0,), times, sizes, horizon, (kappa,))


class IndependentCommonPairs:
    """Common shots only, with independent exponential pair sizes."""

    def __init__(self, rho_common, etas):
        self.rho_common = rho_common
        self.rho_unique = tuple(0.0 for _ in etas)
        self.etas = etas

    def sample_common_sizes(self, n, rng):
        return np.column_stack([rng.exponential(1.0 / e, size=n) for e in self.etas])

    def sample_unique_sizes(self, margin, n, rng):
        raise AssertionError("no unique shots in this model")


class TestIntensityAt:
    def test_pure_decay_halves(self):
        traj = single_margin_traj(2.0, [], [], 2.0, math.log(2.0))
        assert intensity_at(traj, 0, 1.0) == pytest.approx(1.0, abs=1e-14)

    def test_time_zero_returns_initial(self):
        traj = single_margin_traj(3.25, [0.5], [1.0], 2.0, 0.7)
        assert intensity_at(traj, 0, 0.0) == 3.25

    def test_jump_contribution(self):
        # lam0=2, kappa=ln2, one jump of 1 at 0.5: value at 1 is 1 + 2^{-1/2}
        traj = single_margin_traj(2.0, [0.5], [1.0], 2.0, math.log(2.0))
        assert intensity_at(traj, 0, 1.0) == pytest.approx(1.0 + 2.0**-0.5, rel=1e-12)

    def test_right_continuous_at_jump(self):
        traj = single_margin_traj(1.0, [0.5], [2.0], 2.0, 1.0)
        at_jump = intensity_at(traj, 0, 0.5)
        assert at_jump == pytest.approx(math.exp(-0.5) + 2.0, rel=1e-12)

    def test_decay_rate_between_jumps(self):
        traj = single_margin_traj(1.3, [0.2, 1.5], [1.0, 2.0], 3.0, 0.9)
        t, h = 0.6, 0.5  # jump-free window
        assert intensity_at(traj, 0, t + h) == pytest.approx(
            intensity_at(traj, 0, t) * math.exp(-0.9 * h), rel=1e-12
        )

    def test_argument_errors(self):
        traj = single_margin_traj(1.0, [], [], 1.0, 1.0)
        with pytest.raises(ValueError):
            intensity_at(traj, 0, 1.5)
        with pytest.raises(ValueError):
            intensity_at(traj, 1, 0.5)


class TestIntegratedIntensity:
    def test_exponential_integral(self):
        traj = single_margin_traj(1.0, [], [], 2.0, 1.0)
        assert integrated_intensity(traj, 0, 0.0, 1.0) == pytest.approx(
            1.0 - math.exp(-1.0), rel=1e-12
        )

    def test_with_jump(self):
        traj = single_margin_traj(1.0, [0.5], [1.0], 2.0, 1.0)
        expected = (1.0 - math.exp(-1.0)) + (1.0 - math.exp(-0.5))
        assert integrated_intensity(traj, 0, 0.0, 1.0) == pytest.approx(expected, rel=1e-12)

    def test_zero_width(self):
        traj = single_margin_traj(1.0, [0.5], [1.0], 2.0, 1.0)
        assert integrated_intensity(traj, 0, 0.7, 0.7) == 0.0

    def test_t0_gt_t1_rejected(self):
        traj = single_margin_traj(1.0, [], [], 2.0, 1.0)
        with pytest.raises(ValueError):
            integrated_intensity(traj, 0, 1.0, 0.5)

    @given(
        split=st.floats(0.01, 0.99),
        lam0=st.floats(0.0, 10.0),
        kappa=st.floats(0.05, 5.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_additive_over_abutting_intervals(self, split, lam0, kappa):
        traj = single_margin_traj(lam0, [0.3, 1.1], [0.7, 2.2], 2.0, kappa)
        t_mid = 2.0 * split
        whole = integrated_intensity(traj, 0, 0.0, 2.0)
        parts = integrated_intensity(traj, 0, 0.0, t_mid) + integrated_intensity(
            traj, 0, t_mid, 2.0
        )
        assert parts == pytest.approx(whole, rel=1e-12, abs=1e-13)

    def test_matches_grid_recursion(self):
        rng = make_rng(5)
        times = np.sort(rng.uniform(0, 50, size=200))
        sizes = rng.exponential(2.0, size=200)
        traj = single_margin_traj(3.0, times, sizes, 50.0, 0.8)
        grid_vals = intensity_on_grid(traj, 0, 1.0)
        for t in (0, 7, 23, 50):
            assert grid_vals[t] == pytest.approx(intensity_at(traj, 0, float(t)), rel=1e-10)


class TestStationaryInitial:
    def test_mean_matches_gamma(self):
        p = MarginalShotParams(rho=2.0, eta=1.0, kappa=1.0)
        rng = make_rng(11)
        draws = rng.gamma(p.stationary_shape, 1.0 / p.eta, size=10**6)
        se = draws.std() / 1000.0
        single = np.array([sample_stationary_initial(p, make_rng(i)) for i in range(2000)])
        assert abs(draws.mean() - 2.0) < 3 * se
        assert abs(single.mean() - 2.0) < 3 * single.std() / math.sqrt(2000)

    def test_shape_one_is_exponential(self):
        p = MarginalShotParams(rho=1.5, eta=2.0, kappa=1.5)
        rng = make_rng(12)
        draws = np.array([sample_stationary_initial(p, rng) for _ in range(20000)])
        res = stats.kstest(draws, stats.expon(scale=1.0 / p.eta).cdf)
        assert res.pvalue > 0.01

    def test_benchmark_mean(self):
        # (rho/kappa)/eta at the first benchmark margin
        assert PARAMS_A.stationary_mean == pytest.approx(83.82, abs=0.01)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            MarginalShotParams(rho=-1.0, eta=1.0, kappa=1.0)
        with pytest.raises(ValueError):
            MarginalShotParams(rho=1.0, eta=0.0, kappa=1.0)


class TestSimulateTrajectory:
    def test_near_independence_produces_no_common_jumps(self):
        params = (
            MarginalShotParams(1.0, 1.0, 1.0),
            MarginalShotParams(1.0, 1.0, 1.0),
        )
        from shotcox.dependence import MarginalTail

        tails = (MarginalTail(1.0, 1.0), MarginalTail(1.0, 1.0))
        dep = ClaytonDependence(tails, delta=0.03)  # rho_common ~ 1e-10
        traj = simulate_trajectory(params, dep, horizon=10_000.0, rng=make_rng(3))
        both = np.sum((traj.sizes[:, 0] > 0) & (traj.sizes[:, 1] > 0))
        assert both == 0

    def test_common_only_model_has_fully_positive_jumps(self):
        params = (
            MarginalShotParams(2.0, 1.0, 1.0),
            MarginalShotParams(2.0, 0.5, 2.0),
        )
        dep = IndependentCommonPairs(2.0, (1.0, 0.5))
        traj = simulate_trajectory(params, dep, horizon=500.0, rng=make_rng(4))
        assert traj.num_jumps > 0
        assert np.all(traj.sizes > 0.0)

    def test_inconsistent_rates_rejected(self):
        params = (
            MarginalShotParams(2.0, 1.0, 1.0),
            MarginalShotParams(2.0, 1.0, 1.0),
        )
        dep = IndependentCommonPairs(1.5, (1.0, 1.0))  # 1.5 != 2.0
        with pytest.raises(ValueError, match="inconsistent"):
            simulate_trajectory(params, dep, horizon=10.0, rng=make_rng(5))

    def test_empirical_cross_covariance_matches_formula(self):
        kappa1, kappa2 = 1.0, 2.0
        rho_common = 5.0
        params = (
            MarginalShotParams(rho_common, 1.0, kappa1),
            MarginalShotParams(rho_common, 1.0, kappa2),
        )
        dep = IndependentCommonPairs(rho_common, (1.0, 1.0))
        traj = simulate_trajectory(params, dep, horizon=100_000.0, rng=make_rng(6))
        g0 = intensity_on_grid(traj, 0, 1.0)
        g1 = intensity_on_grid(traj, 1, 1.0)
        burn = 30  # settle from the initial draw
        emp = np.cov(g0[burn:], g1[burn:])[0, 1]
        theo = theoretical_cov(rho_common, 1.0, kappa1, kappa2)
        assert emp == pytest.approx(theo, rel=0.05)


class TestTheoreticalCov:
    def test_direct_substitution(self):
        assert theoretical_cov(1.0, 1.0, 1.0, 1.0) == 0.5

    def test_no_common_shots_means_independence(self):
        assert theoretical_cov(0.0, 123.4, 0.3, 0.9) == 0.0

    def test_benchmark_clayton_cross_moment(self):
        # Monte Carlo covariance of simulated paths against the closed form,
        # common rate and cross moment from the fitted dependence model.
        dep = ClaytonDependence(TAILS_BENCH, DELTA_BENCH)
        params = (PARAMS_A, PARAMS_B)
        traj = simulate_trajectory(params, dep, horizon=100_000.0, rng=make_rng(7))
        g0 = intensity_on_grid(traj, 0, 1.0)
        g1 = intensity_on_grid(traj, 1, 1.0)
        emp = np.cov(g0[30:], g1[30:])[0, 1]
        from shotcox.dependence import mean_common_cross_product

        exy = mean_common_cross_product(TAILS_BENCH, DELTA_BENCH)
        theo = theoretical_cov(dep.rho_common, exy, PARAMS_A.kappa, PARAMS_B.kappa)
        assert emp == pytest.approx(theo, rel=0.05)


class TestTrajectoryValidation:
    def test_unsorted_times_rejected(self):
        with pytest.raises(ValueError):
            Trajectory((1.0,), np.array([0.5, 0.2]), np.array([[1.0], [1.0]]), 1.0, (1.0,))

    def test_jump_event_invariants(self):
        with pytest.raises(ValueError):
            JumpEvent(0.5, (0.0, 0.0))
        with pytest.raises(ValueError):
            JumpEvent(0.5, (-1.0, 1.0))

    def test_from_jumps_roundtrip(self):
        jumps = [JumpEvent(0.7, (1.0, 0.0)), JumpEvent(0.2, (0.0, 2.0))]
        traj = Trajectory.from_jumps((0.5, 0.5), jumps, 1.0, (1.0, 2.0))
        assert traj.times.tolist() == [0.2, 0.7]
        assert traj.jumps[0].sizes == (0.0, 2.0)
