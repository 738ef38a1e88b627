"""
Tests for excursion and occupation statistics
"""

import math

import numpy as np
import pytest

from app.core.exceptions import ConfigurationError
from app.core.interface_stats import (
    boundary_increment_limits,
    brownian_occupation_oracle,
    check_schedule,
    default_scale_exponent,
    default_schedules,
    discounted_occupation,
    eigenfunction_residual,
    excursion_exit_stats,
    excursion_step,
    exit_eigenfunction,
    increment_targets,
    occupation_fit,
    occupation_time,
)
from app.core.registry import build_model
from app.core.sde_engine import grid_for, simulate_full_batch

SQRT_PI = math.sqrt(math.pi)


class TestSchedules:
    """Test cases for the delta/ell schedules"""

    def test_deviation_schedule(self):
        """Test delta = eps^(1 - 2 gamma) and ell = eps^(1 - gamma)"""
        deltas, ells = default_schedules("standard", [0.1, 0.01], gamma=0.2)
        assert deltas == pytest.approx([0.1 ** 0.6, 0.01 ** 0.6])
        assert ells == pytest.approx([0.1 ** 0.8, 0.01 ** 0.8])
        check_schedule(deltas, ells)

    def test_longtime_schedule(self):
        """Test the long-time schedule uses eps^2 as the fast scale"""
        deltas, ells = default_schedules("longtime", [0.1], gamma=0.25)
        assert deltas[0] == pytest.approx(0.1 ** 1.5)
        assert ells[0] == pytest.approx(0.1 ** 1.75)

    def test_gamma_range(self):
        """Test gamma must lie in (0, 1/2)"""
        with pytest.raises(ConfigurationError):
            default_schedules("standard", [0.1], gamma=0.5)

    def test_ell_must_stay_inside_delta(self):
        """Test ell >= delta is refused"""
        with pytest.raises(ConfigurationError):
            check_schedule([0.1, 0.05], [0.2, 0.01])

    def test_ratio_must_increase(self):
        """Test delta / ell must grow along the schedule"""
        with pytest.raises(ConfigurationError):
            check_schedule([0.4, 0.2], [0.1, 0.1])

    def test_excursion_step(self):
        """Test the excursion step resolves both eps and delta"""
        assert excursion_step(0.1, 0.2) == pytest.approx(min(1e-3, (0.02 * 0.2) ** 2))

    def test_scale_exponents(self):
        """Test the increment scaling picked from the model"""
        assert default_scale_exponent(build_model("gaussian_drift"), "standard") == 1.0
        assert default_scale_exponent(build_model("gaussian_diffusion"), "standard") == 0.5
        assert default_scale_exponent(build_model("gaussian_longtime"), "longtime") == 0.0


class TestExitStatistics:
    """Test cases for excursion_exit_stats"""

    @pytest.fixture
    def trivial(self):
        return build_model("trivial")

    def test_symmetric_exit_from_zero(self, trivial):
        """Test P(exit above) = 1/2 and E theta = delta^2 for Brownian motion"""
        stats = excursion_exit_stats(trivial, 0.1, (0.0, [0.0]), delta=0.2, ell=0.1, n_paths=2000, seed=1)
        assert abs(stats.p_plus_hat - 0.5) < 4 * stats.p_stderr
        assert stats.p_plus_hat + stats.p_minus_hat == pytest.approx(1.0)
        assert stats.theta_mean / 0.2 ** 2 == pytest.approx(1.0, rel=0.1)
        assert stats.theta_second >= stats.theta_mean ** 2
        assert stats.theta_second / 0.2 ** 4 == pytest.approx(5.0 / 3.0, rel=0.2)
        assert stats.n_censored == 0
        np.testing.assert_array_equal(stats.mean_dy_over_delta, 0.0)

    def test_increments_follow_unperturbed_flow(self):
        """Test b2 = 0 and sigma = 0 give zero increments even when b1 moves the slow state"""
        relaxing = build_model("trivial", {"lam": 1.0})
        stats = excursion_exit_stats(relaxing, 0.1, (0.0, [1.0]), delta=0.2, ell=0.1, n_paths=200, seed=4)
        np.testing.assert_array_equal(stats.mean_dy_over_delta, 0.0)
        np.testing.assert_array_equal(stats.mean_dydy_over_delta, 0.0)
        assert stats.third_moment_over_delta == 0.0
        assert stats.third_moment_stderr == 0.0

    def test_third_moment_stderr(self):
        """Test the third-moment estimate carries a positive standard error when increments are random"""
        stats = excursion_exit_stats(
            build_model("gaussian_diffusion"), 0.1, (0.0, [0.0]), delta=0.2, ell=0.1, n_paths=200, seed=5,
        )
        assert stats.third_moment_over_delta > 0.0
        assert 0.0 < stats.third_moment_stderr < stats.third_moment_over_delta
        assert stats.as_row()["third_moment_stderr"] == stats.third_moment_stderr

    def test_exit_from_offset_start(self, trivial):
        """Test P(exit above) = (delta + x) / (2 delta) from x = delta / 2"""
        stats = excursion_exit_stats(trivial, 0.1, (0.1, [0.0]), delta=0.2, ell=0.1, n_paths=2000, seed=2)
        assert abs(stats.p_plus_hat - 0.75) < 4 * stats.p_stderr

    def test_row_export(self, trivial):
        """Test the CSV row carries per-component columns"""
        stats = excursion_exit_stats(trivial, 0.1, (0.0, [0.0]), delta=0.2, ell=0.1, n_paths=50, seed=1)
        row = stats.as_row()
        assert {"eps", "delta", "p_plus", "theta_mean", "mean_dy_over_delta_1", "mean_dydy_over_delta_11"} <= set(row)

    def test_start_outside_inner_band(self, trivial):
        """Test a start point beyond ell is refused"""
        with pytest.raises(ValueError):
            excursion_exit_stats(trivial, 0.1, (0.15, [0.0]), delta=0.2, ell=0.1, n_paths=10, seed=0)

    def test_ell_must_be_below_delta(self, trivial):
        """Test ell >= delta is refused"""
        with pytest.raises(ValueError):
            excursion_exit_stats(trivial, 0.1, (0.0, [0.0]), delta=0.2, ell=0.2, n_paths=10, seed=0)

    def test_needs_two_paths(self, trivial):
        """Test a single path cannot produce standard errors"""
        with pytest.raises(ValueError):
            excursion_exit_stats(trivial, 0.1, (0.0, [0.0]), delta=0.2, ell=0.1, n_paths=1, seed=0)


class TestBoundaryIncrements:
    """Test cases for increment targets and convergence tables"""

    def test_longtime_targets(self):
        """Test the long-time targets are beta and alpha themselves"""
        beta, alpha = increment_targets(build_model("gaussian_longtime"), "longtime", [0.0], 0.0)
        assert beta[0] == pytest.approx(SQRT_PI, abs=1e-6)
        assert alpha[0, 0] == pytest.approx(SQRT_PI, abs=1e-6)

    def test_drift_targets(self):
        """Test the eps^-1 scaling keeps beta and drops alpha"""
        beta, alpha = increment_targets(build_model("gaussian_drift"), "standard", [0.0], 1.0)
        assert beta[0] == pytest.approx(SQRT_PI, abs=1e-6)
        assert alpha[0, 0] == 0.0

    def test_table_layout(self):
        """Test one row per eps with targets attached"""
        table = boundary_increment_limits(
            build_model("gaussian_drift"), "standard", [0.0], eps_schedule=[0.2, 0.1], n_paths=100, seed=3,
        )
        assert len(table.rows) == 2
        frame = table.to_frame()
        assert {"eps", "delta", "target_beta_1", "target_alpha_11", "approaching", "regime"} <= set(frame.columns)
        assert list(frame["eps"]) == [0.2, 0.1]
        assert (frame["regime"] == "standard").all()

    def test_schedule_length_mismatch(self):
        """Test explicit schedules must match the eps schedule"""
        with pytest.raises(ConfigurationError):
            boundary_increment_limits(
                build_model("gaussian_drift"), "standard", [0.0], eps_schedule=[0.2, 0.1],
                delta_schedule=[0.3], ell_schedule=[0.1], n_paths=10,
            )


class TestOccupation:
    """Test cases for occupation times"""

    def test_left_point_fraction(self):
        """Test the fraction counts left endpoints inside the band"""
        x = np.array([0.0, 0.05, 0.2, 1.0])
        assert occupation_time(x, 0.1) == pytest.approx(2.0 / 3.0)

    def test_per_path_values(self):
        """Test a stack of paths gives one value per path"""
        x = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        np.testing.assert_allclose(occupation_time(x, 0.5), [1.0, 0.0])

    def test_monotone_in_band_width(self):
        """Test each path's occupation fraction never decreases as the band widens"""
        grid = grid_for(1.0, 0.1)
        batch = simulate_full_batch(build_model("trivial"), 0.1, 0.0, [0.0], grid, seed=6, path_indices=range(20))
        fractions = np.stack([occupation_time(batch, delta) for delta in (0.01, 0.05, 0.1, 0.2, 0.5, 2.0)])
        assert fractions.shape[1] == 20
        assert np.all(np.diff(fractions, axis=0) >= 0.0)
        assert np.all((fractions >= 0.0) & (fractions <= 1.0))

    def test_discounted_without_discount(self):
        """Test lam = 0 gives occupation fraction times T"""
        grid = grid_for(0.5, 0.2)
        batch = simulate_full_batch(build_model("trivial"), 0.2, 0.0, [0.0], grid, seed=0, path_indices=[0, 1])
        np.testing.assert_allclose(discounted_occupation(batch, 0.1, 0.0), occupation_time(batch, 0.1) * 0.5)

    def test_discount_must_be_nonnegative(self):
        """Test a negative discount rate is refused"""
        grid = grid_for(0.5, 0.2)
        batch = simulate_full_batch(build_model("trivial"), 0.2, 0.0, [0.0], grid, seed=0, path_indices=[0])
        with pytest.raises(ValueError):
            discounted_occupation(batch, 0.1, -1.0)

    def test_brownian_oracle(self):
        """Test the small-band oracle is close to 4 delta / sqrt(2 pi)"""
        value = brownian_occupation_oracle(0.1)
        assert abs(value - 0.4 / math.sqrt(2 * math.pi)) < 0.02
        assert brownian_occupation_oracle(0.05) < value < brownian_occupation_oracle(0.2)
        assert brownian_occupation_oracle(50.0) == pytest.approx(1.0, abs=1e-6)

    def test_fit_of_exact_line(self):
        """Test the least-squares fit of collinear points"""
        fit = occupation_fit([0.05, 0.1, 0.2], [0.1, 0.2, 0.4])
        assert fit["slope"] == pytest.approx(2.0)
        assert fit["intercept"] == pytest.approx(0.0, abs=1e-12)
        assert fit["r2"] == pytest.approx(1.0)


class TestExitEigenfunction:
    """Test cases for the two-sided exponential eigenfunction"""

    def test_continuous_at_zero(self):
        """Test u(0) = 1 from both sides"""
        u = exit_eigenfunction(1.0, 4.0, 1.0, np.array([-1e-12, 0.0, 1e-12]))
        np.testing.assert_allclose(u, 1.0, atol=1e-10)

    def test_eigen_equation(self):
        """Test (a/2) u'' = lam u away from zero"""
        x = np.linspace(-3.0, 3.0, 61)
        assert eigenfunction_residual(1.0, 4.0, 1.0, x) < 1e-5
        assert eigenfunction_residual(2.0, 1.0, 1.0, x) < 1e-5


if __name__ == "__main__":
    pytest.main([__file__])
