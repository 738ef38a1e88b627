"""
Tests for the bundled model registry and the random streams
"""

import math

import numpy as np
import pytest

from app.core.exceptions import ConfigurationError
from app.core.registry import MODELS, build_model, list_models
from app.core.rng import PathStream, Substream, batch_normals


class TestRegistry:
    """Test cases for build_model"""

    def test_list_models_sorted(self):
        """Test every registered model is listed in order"""
        names = list_models()
        assert names == sorted(MODELS)
        assert {"trivial", "gaussian_drift", "gaussian_diffusion", "gaussian_longtime"} <= set(names)

    def test_unknown_model(self):
        """Test an unknown name is a configuration error"""
        with pytest.raises(ConfigurationError, match="unknown model"):
            build_model("no_such_model")

    def test_unknown_parameter(self):
        """Test an override the factory does not accept is rejected"""
        with pytest.raises(ConfigurationError, match="no parameter"):
            build_model("trivial", {"b_scale": 1.0})

    def test_integer_dimensions(self):
        """Test dimension overrides arrive as integers"""
        model = build_model("gaussian_diffusion", {"d": 2.0})
        assert model.d == 2
        assert model.k == 2
        assert isinstance(model.d, int)

    def test_every_model_builds(self):
        """Test each bundled model builds with its defaults and is elliptic at zero"""
        for name in list_models():
            model = build_model(name)
            x = np.zeros(1)
            y = np.zeros((1, model.d))
            phi_sq = model.phi_sq(x, y)[0]
            assert model.c1 < phi_sq < model.c2, name
            assert model.analytic_refs is not None, name

    def test_linear_relaxation(self):
        """Test b1 = -lam y and its Jacobian"""
        model = build_model("gaussian_diffusion", {"lam": 2.0})
        y = np.array([[1.5]])
        np.testing.assert_allclose(model.b1(y), [[-3.0]])
        np.testing.assert_allclose(model.b1_jac(y), [[[-2.0]]])

    def test_longtime_model_has_no_b1(self):
        """Test the long-time model has a vanishing b1"""
        model = build_model("gaussian_longtime")
        assert model.drift_vanishes(np.linspace(-3, 3, 7)[:, None])
        assert model.analytic_refs.limit_mean_slow[0] == pytest.approx(math.sqrt(2.0))

    def test_drift_model_sigma_vanishes(self):
        """Test the drift model has no localized noise"""
        model = build_model("gaussian_drift")
        assert model.diffusion_vanishes(np.linspace(-3, 3, 7), np.zeros((7, 1)))

    def test_two_sided_rejects_nonpositive(self):
        """Test two_sided needs positive levels"""
        with pytest.raises(ConfigurationError):
            build_model("two_sided", {"low": 0.0})


class TestPathStream:
    """Test cases for counter-based streams"""

    def test_reproducible(self):
        """Test equal keys give equal draws"""
        a = PathStream(7, 3, Substream.DRIVER).normals(100)
        b = PathStream(7, 3, Substream.DRIVER).normals(100)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self):
        """Test path index and substream both change the draws"""
        base = PathStream(7, 3, Substream.DRIVER).normals(50)
        assert not np.array_equal(base, PathStream(7, 4, Substream.DRIVER).normals(50))
        assert not np.array_equal(base, PathStream(7, 3, Substream.INTERFACE).normals(50))
        assert not np.array_equal(base, PathStream(8, 3, Substream.DRIVER).normals(50))

    def test_uniforms_open_interval(self):
        """Test uniforms stay strictly inside (0, 1)"""
        u = PathStream(1, 0).uniforms(10000)
        assert u.min() > 0.0
        assert u.max() < 1.0

    def test_normals_are_standard(self):
        """Test the sample moments of the normal draws"""
        z = PathStream(11, 0).normals(20000)
        assert abs(z.mean()) < 0.05
        assert abs(z.std() - 1.0) < 0.05

    def test_batch_rows_match_single_streams(self):
        """Test a batch row equals the stream of its own path index"""
        block = batch_normals(5, np.array([2, 9]), Substream.SINGULAR, (4, 3))
        assert block.shape == (2, 4, 3)
        np.testing.assert_array_equal(block[1], PathStream(5, 9, Substream.SINGULAR).normals((4, 3)))


if __name__ == "__main__":
    pytest.main([__file__])
