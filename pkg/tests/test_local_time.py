"""
Tests for the local-time estimators
"""

import math

import numpy as np
import pytest

from app.core.exceptions import BandResolutionError
from app.core.local_time import default_band, flat_off_zero_violations, local_time_band, local_time_tanaka
from app.core.models import TimeGrid
from app.core.rng import PathStream


class TestBandEstimator:
    """Test cases for local_time_band"""

    def test_default_band(self):
        """Test band = factor * sqrt(dt)"""
        assert default_band(1e-4, 2.0) == pytest.approx(0.02)

    def test_constant_zero_path(self):
        """Test a path sitting at zero accumulates qv / (2 band)"""
        x = np.zeros(11)
        qv = np.full(10, 0.01)
        profile = local_time_band(x, qv, band=0.1, dt=0.01)
        assert profile.method == "band"
        assert profile.band_width == 0.1
        assert profile.L[0] == 0.0
        assert profile.L[-1] == pytest.approx(0.5)
        assert np.all(np.diff(profile.L) >= 0)

    def test_band_below_resolution(self):
        """Test a band finer than sqrt(dt) is refused"""
        with pytest.raises(BandResolutionError):
            local_time_band(np.zeros(11), np.full(10, 0.01), band=0.05, dt=0.01)

    def test_shape_mismatch(self):
        """Test qv increments must match the path"""
        with pytest.raises(ValueError):
            local_time_band(np.zeros(11), np.full(9, 0.01), band=0.1, dt=0.01)

    def test_negative_qv(self):
        """Test quadratic variation increments must be nonnegative"""
        qv = np.full(10, 0.01)
        qv[3] = -0.01
        with pytest.raises(ValueError):
            local_time_band(np.zeros(11), qv, band=0.1, dt=0.01)

    def test_flat_away_from_zero(self):
        """Test L does not move while the path stays outside the band"""
        x = np.concatenate([np.zeros(5), np.full(6, 3.0)])
        profile = local_time_band(x, np.full(10, 0.01), band=0.1, dt=0.01)
        assert flat_off_zero_violations(x, profile, 0.1) == 0
        assert profile.L[-1] == pytest.approx(profile.L[5])


class TestTanakaEstimator:
    """Test cases for local_time_tanaka"""

    def test_linear_crossing(self):
        """Test a straight crossing of zero on a coarse grid"""
        x = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
        profile = local_time_tanaka(x)
        np.testing.assert_allclose(profile.L, [0.0, 0.0, 0.0, 0.5, 0.5])
        assert profile.clamp_magnitude == 0.0

    def test_path_away_from_zero(self):
        """Test a path that never reaches zero has zero local time"""
        x = 1.0 + np.linspace(0.0, 1.0, 21)
        profile = local_time_tanaka(x)
        np.testing.assert_allclose(profile.L, 0.0, atol=1e-12)

    def test_monotone(self):
        """Test the estimate is nondecreasing even for rough paths"""
        steps = 0.05 * PathStream(3, 0).normals(400)
        x = np.concatenate([[0.0], np.cumsum(steps)])
        profile = local_time_tanaka(x)
        assert np.all(np.diff(profile.L) >= 0)

    def test_increment_shape_mismatch(self):
        """Test explicit increments must match the path"""
        with pytest.raises(ValueError):
            local_time_tanaka(np.zeros(5), np.zeros(3))


class TestBrownianLocalTime:
    """Test cases for both estimators on Brownian paths"""

    @pytest.fixture
    def paths(self):
        grid = TimeGrid(0.0, 1e-3, 1000)
        n_paths = 2000
        steps = np.stack([math.sqrt(grid.dt) * PathStream(17, i).normals(grid.n_steps) for i in range(n_paths)])
        x = np.zeros((n_paths, grid.n_steps + 1))
        x[:, 1:] = np.cumsum(steps, axis=1)
        return grid, x

    def test_tanaka_mean(self, paths):
        """Test E L(1) matches sqrt(2 / pi)"""
        grid, x = paths
        profile = local_time_tanaka(x, grid=grid)
        assert abs(profile.L[:, -1].mean() - math.sqrt(2 / math.pi)) < 0.06

    def test_band_mean(self, paths):
        """Test the band estimator agrees with sqrt(2 / pi)"""
        grid, x = paths
        band = default_band(grid.dt)
        profile = local_time_band(x, np.diff(x, axis=1) ** 2, band, grid=grid)
        assert profile.L.shape == x.shape
        assert abs(profile.L[:, -1].mean() - math.sqrt(2 / math.pi)) < 0.08


if __name__ == "__main__":
    pytest.main([__file__])
