"""
Tests for the limit-process builders
"""

import math

import numpy as np
import pytest

from app.core.coefficients import AveragedInterfaceData
from app.core.limit_builder import (
    build_deviation_limit,
    build_longtime_limit,
    build_V,
    cantor_support_violations,
    evolve_zeta_diffusive,
    evolve_zeta_drift,
    simulate_interface_em,
    time_change_round_trip,
    time_changed_interface,
)
from app.core.models import TimeGrid

SQRT_PI = math.sqrt(math.pi)


def _relaxation(lam: float):
    return lambda y: np.broadcast_to(-lam * np.eye(y.shape[-1]), (y.shape[0], y.shape[-1], y.shape[-1])).copy()


class TestInterfaceCoordinate:
    """Test cases for the time-changed interface coordinate"""

    @pytest.fixture
    def grid(self):
        return TimeGrid(0.0, 0.01, 100)

    def test_unit_coefficients_give_brownian_motion(self, grid):
        """Test a+ = a- = 1 leaves the clock untouched"""
        avg = AveragedInterfaceData.from_constants(1.0, 1.0, [0.0], [[0.0]])
        x0, clock = time_changed_interface(avg, np.zeros((grid.n_steps + 1, 1)), grid, seed=4, path_indices=range(2000))
        assert x0.shape == (2000, grid.n_steps + 1)
        np.testing.assert_allclose(x0[:, 0], 0.0)
        assert abs(np.var(x0[:, -1]) - 1.0) < 0.15
        assert time_change_round_trip(clock, grid) < 1e-6

    def test_oscillating_motion_sign_probability(self, grid):
        """Test P(X0(T) > 0) = sqrt(a-) / (sqrt(a+) + sqrt(a-))"""
        avg = AveragedInterfaceData.from_constants(4.0, 1.0, [0.0], [[0.0]])
        y_ref = np.zeros((grid.n_steps + 1, 1))
        x0, _ = time_changed_interface(avg, y_ref, grid, seed=8, path_indices=range(4000))
        assert abs(np.mean(x0[:, -1] > 0) - 1.0 / 3.0) < 0.05

    def test_direct_scheme_agrees_in_variance(self, grid):
        """Test the Euler cross-check has the same second moment for constant a"""
        avg = AveragedInterfaceData.from_constants(2.0, 2.0, [0.0], [[0.0]])
        y_ref = np.zeros((grid.n_steps + 1, 1))
        x = simulate_interface_em(avg, y_ref, grid, seed=1, path_indices=range(2000))
        assert x.shape == (2000, grid.n_steps + 1)
        assert abs(np.var(x[:, -1]) - 2.0) < 0.3


class TestSingularComponents:
    """Test cases for V and the zeta recursions"""

    @pytest.fixture
    def grid(self):
        return TimeGrid(0.0, 0.01, 50)

    @pytest.fixture
    def staircase(self, grid):
        L = np.zeros((3, grid.n_steps + 1))
        L[:, 11:] = 0.2
        L[:, 31:] = 0.5
        return L

    def test_V_flat_where_L_flat(self, staircase):
        """Test V moves only on steps where L moves"""
        V = build_V(staircase, d=2, seed=0, path_indices=[0, 1, 2])
        assert V.shape == (3, staircase.shape[1], 2)
        moves = np.any(np.diff(V, axis=1) != 0, axis=-1)
        flat = np.diff(staircase, axis=1) == 0
        assert not np.any(moves & flat)
        np.testing.assert_array_equal(V[:, 0], 0.0)

    def test_V_rejects_decreasing_clock(self, staircase):
        """Test the local-time clock must be nondecreasing"""
        staircase[0, 40] = 0.0
        with pytest.raises(ValueError):
            build_V(staircase, d=1, seed=0, path_indices=[0, 1, 2])

    def test_drift_recursion_without_relaxation(self, grid, staircase):
        """Test zeta = beta L when b1 has zero Jacobian"""
        y_ref = np.zeros((grid.n_steps + 1, 1))
        zeta = evolve_zeta_drift(_relaxation(0.0), y_ref, lambda y: np.full((len(y), 1), SQRT_PI), staircase, grid)
        np.testing.assert_allclose(zeta[..., 0], SQRT_PI * staircase, atol=1e-12)

    def test_drift_recursion_with_relaxation(self, grid, staircase):
        """Test the propagator form sum exp(-lam (T - t_i)) beta dL_i"""
        lam, beta = 1.5, 0.7
        y_ref = np.zeros((grid.n_steps + 1, 1))
        zeta = evolve_zeta_drift(_relaxation(lam), y_ref, lambda y: np.full((len(y), 1), beta), staircase, grid)
        dL = np.diff(staircase[0])
        n = grid.n_steps
        expected = sum(math.exp(-lam * grid.dt * (n - i)) * beta * dL[i] for i in range(n))
        assert zeta[0, -1, 0] == pytest.approx(expected, rel=1e-10)

    def test_diffusive_recursion_without_relaxation(self, grid, staircase):
        """Test zeta = sqrt(alpha) V when b1 has zero Jacobian"""
        V = build_V(staircase, d=1, seed=3, path_indices=[0, 1, 2])
        y_ref = np.zeros((grid.n_steps + 1, 1))
        zeta = evolve_zeta_diffusive(_relaxation(0.0), y_ref, lambda y: np.full((len(y), 1, 1), 4.0), V, grid)
        np.testing.assert_allclose(zeta, 2.0 * V, atol=1e-12)


class TestLimitPaths:
    """Test cases for assembled limit paths"""

    @pytest.fixture
    def grid(self):
        return TimeGrid(0.0, 1e-3, 500)

    @pytest.fixture
    def avg(self):
        return AveragedInterfaceData.from_constants(1.0, 1.0, [SQRT_PI], [[SQRT_PI]])

    def test_diffusive_limit_support(self, grid, avg):
        """Test V of the diffusive limit moves only with the local time"""
        y_ref = np.zeros((grid.n_steps + 1, 1))
        limit = build_deviation_limit(avg, _relaxation(1.0), y_ref, grid, seed=0, path_indices=range(20))
        assert limit.zeta_or_y.shape == (20, grid.n_steps + 1, 1)
        assert cantor_support_violations(limit)["v_without_local_time"] == 0

    def test_drift_limit_has_no_martingale_part(self, grid, avg):
        """Test the drift limit carries V = 0 and a nonnegative zeta without relaxation"""
        y_ref = np.zeros((grid.n_steps + 1, 1))
        limit = build_deviation_limit(avg, _relaxation(0.0), y_ref, grid, seed=0, path_indices=range(20), mode="drift")
        np.testing.assert_array_equal(limit.V, 0.0)
        np.testing.assert_allclose(limit.zeta_or_y[..., 0], SQRT_PI * limit.L.L, atol=1e-12)

    def test_unknown_mode(self, grid, avg):
        """Test an unknown deviation mode is refused"""
        with pytest.raises(ValueError):
            build_deviation_limit(avg, _relaxation(0.0), np.zeros((grid.n_steps + 1, 1)), grid, seed=0, mode="jump")

    def test_longtime_limit(self, grid, avg):
        """Test the slow coordinate of the long-time limit only moves near the interface"""
        limit = build_longtime_limit(avg, [0.5], grid, seed=6, path_indices=range(20))
        assert limit.x0_path.shape == (20, grid.n_steps + 1)
        np.testing.assert_allclose(limit.zeta_or_y[:, 0, 0], 0.5)
        assert np.all(np.diff(limit.L.L, axis=1) >= 0)
        counts = cantor_support_violations(limit)
        assert counts["slow_off_band"] == 0
        assert counts["v_without_local_time"] == 0

    def test_reproducible_per_path(self, grid, avg):
        """Test a path is the same in any batch"""
        y_ref = np.zeros((grid.n_steps + 1, 1))
        together = build_deviation_limit(avg, _relaxation(1.0), y_ref, grid, seed=2, path_indices=[0, 1, 2])
        alone = build_deviation_limit(avg, _relaxation(1.0), y_ref, grid, seed=2, path_indices=[2])
        np.testing.assert_array_equal(together.x0_path[2], alone.x0_path[0])
        np.testing.assert_array_equal(together.zeta_or_y[2], alone.zeta_or_y[0])


if __name__ == "__main__":
    pytest.main([__file__])
