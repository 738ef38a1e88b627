"""
Tests for the prelimit Euler-Maruyama engine
"""

import math

import numpy as np
import pytest

from app.core.exceptions import AssumptionViolation, DivergenceError, GridMismatchError, StepSizeError
from app.core.models import TimeGrid
from app.core.registry import build_model
from app.core.sde_engine import (
    check_step,
    deviation,
    deviation_batch,
    grid_for,
    quadratic_variation,
    simulate_full,
    simulate_full_batch,
    simulate_longtime,
    solve_unperturbed,
    step_limit,
)


class TestStepRule:
    """Test cases for the step-size rule"""

    def test_standard_and_longtime_limits(self):
        """Test dt <= 0.1 eps^2 and dt <= 0.1 eps^4"""
        assert step_limit(0.1) == pytest.approx(1e-3)
        assert step_limit(0.1, "longtime") == pytest.approx(1e-5)
        assert step_limit(0.1, step_safety=0.5) == pytest.approx(5e-3)

    def test_rejects_nonpositive_eps(self):
        """Test eps must be positive"""
        with pytest.raises(ValueError):
            step_limit(0.0)

    def test_grid_for_respects_rule(self):
        """Test the generated grid satisfies the rule and covers the horizon"""
        grid = grid_for(1.0, 0.1)
        assert grid.dt <= step_limit(0.1) * (1 + 1e-12)
        assert grid.horizon == pytest.approx(1.0)
        check_step(grid, 0.1, "standard")

    def test_coarse_grid_rejected(self):
        """Test a grid coarser than the rule raises"""
        with pytest.raises(StepSizeError):
            check_step(TimeGrid(0.0, 0.01, 100), 0.1, "standard")


class TestUnperturbedFlow:
    """Test cases for solve_unperturbed"""

    def test_linear_decay(self):
        """Test RK4 matches exp(-lam t) for b1 = -lam y"""
        grid = TimeGrid(0.0, 0.01, 100)
        path = solve_unperturbed(build_model("gaussian_diffusion", {"lam": 1.0}), [2.0], grid)
        assert path.shape == (101, 1)
        assert path[-1, 0] == pytest.approx(2.0 * math.exp(-1.0), rel=1e-8)

    def test_divergence(self):
        """Test leaving the bound raises"""
        grid = TimeGrid(0.0, 0.01, 1000)
        with pytest.raises(DivergenceError):
            solve_unperturbed(build_model("trivial", {"lam": -5.0}), [1.0], grid, bound=100.0)


class TestFullSystem:
    """Test cases for simulate_full_batch"""

    @pytest.fixture
    def grid(self):
        return grid_for(0.5, 0.2)

    def test_unit_phi_is_brownian(self, grid):
        """Test X is the running sum of the noise when |phi|^2 = 1"""
        batch = simulate_full_batch(build_model("trivial"), 0.2, 0.0, [0.0], grid, seed=1, path_indices=[0, 1])
        np.testing.assert_allclose(batch.x[:, -1], np.sum(batch.dw[:, :, 0], axis=1), atol=1e-12)

    def test_unperturbed_slow_stays_put(self, grid):
        """Test Y is constant without b1, b2 and sigma"""
        batch = simulate_full_batch(build_model("trivial"), 0.2, 0.0, [0.7], grid, seed=1, path_indices=[0, 1, 2])
        assert np.all(batch.y_slow == 0.7)

    def test_independent_of_batch_split(self, grid):
        """Test path i is the same however the batch is composed"""
        model = build_model("gaussian_diffusion")
        full = simulate_full_batch(model, 0.2, 0.0, [0.0], grid, seed=3, path_indices=[0, 1, 2])
        single = simulate_full(model, 0.2, 0.0, [0.0], grid, seed=3, path_index=2)
        np.testing.assert_array_equal(full.x[2], single.x)
        np.testing.assert_array_equal(full.y_slow[2], single.y_slow)

    def test_shapes(self, grid):
        """Test array shapes of a batch"""
        model = build_model("gaussian_diffusion", {"d": 2})
        batch = simulate_full_batch(model, 0.2, 0.0, [0.0, 0.0], grid, seed=0, path_indices=[0, 1])
        n = grid.n_steps
        assert batch.x.shape == (2, n + 1)
        assert batch.y_slow.shape == (2, n + 1, 2)
        assert batch.dw.shape == (2, n, 2)
        assert batch.regime == "standard"

    def test_rejects_coarse_grid(self):
        """Test the engine enforces the step rule"""
        with pytest.raises(StepSizeError):
            simulate_full(build_model("trivial"), 0.1, 0.0, [0.0], TimeGrid(0.0, 0.1, 10), seed=0)

    def test_quadratic_variation_of_brownian(self, grid):
        """Test the realized quadratic variation of X is close to T"""
        batch = simulate_full_batch(build_model("trivial"), 0.2, 0.0, [0.0], grid, seed=5, path_indices=range(200))
        qv = quadratic_variation(batch.x)
        assert qv.shape == (200,)
        assert abs(qv.mean() - 0.5) < 0.02


class TestLongtimeSystem:
    """Test cases for simulate_longtime"""

    def test_requires_vanishing_b1(self):
        """Test a nonzero b1 is refused"""
        grid = grid_for(0.1, 0.5, "longtime")
        with pytest.raises(AssumptionViolation):
            simulate_longtime(build_model("gaussian_diffusion", {"lam": 1.0}), 0.5, 0.0, [0.0], grid, seed=0)

    def test_start_is_scaled(self):
        """Test X(0) = eps x0 in the long-time scaling"""
        grid = grid_for(0.05, 0.5, "longtime")
        bundle = simulate_longtime(build_model("gaussian_longtime"), 0.5, 2.0, [0.0], grid, seed=0)
        assert bundle.x[0] == pytest.approx(1.0)
        assert bundle.regime == "longtime"


class TestDeviation:
    """Test cases for deviation processes"""

    @pytest.fixture
    def setup(self):
        model = build_model("gaussian_diffusion")
        grid = grid_for(0.2, 0.2)
        batch = simulate_full_batch(model, 0.2, 0.0, [1.0], grid, seed=2, path_indices=[0, 1])
        return model, grid, batch

    def test_scaling(self, setup):
        """Test zeta = eps^-1/2 (Y - y)"""
        model, grid, batch = setup
        y_ref = solve_unperturbed(model, [1.0], grid)
        dev = deviation_batch(batch, y_ref, 0.5)
        np.testing.assert_allclose(dev.zeta, (batch.y_slow - y_ref[None]) / math.sqrt(0.2))
        single = deviation(batch.bundle(1), y_ref, 0.5)
        np.testing.assert_allclose(single.zeta, dev.zeta[1])

    def test_rejects_other_exponents(self, setup):
        """Test only the two deviation exponents are accepted"""
        model, grid, batch = setup
        y_ref = solve_unperturbed(model, [1.0], grid)
        with pytest.raises(ValueError):
            deviation_batch(batch, y_ref, 0.75)

    def test_rejects_reference_on_other_grid(self, setup):
        """Test a reference with the wrong node count is refused"""
        _, _, batch = setup
        with pytest.raises(GridMismatchError):
            deviation_batch(batch, np.zeros((3, 1)), 0.5)


if __name__ == "__main__":
    pytest.main([__file__])
