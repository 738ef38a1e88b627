"""
Tests for experiment configs and the run pipeline
"""

import json
from pathlib import Path

import pytest

from app.core.exceptions import ConfigurationError
from app.core.experiment import (
    apply_overrides,
    exit_status,
    load_config,
    load_report,
    report_summary,
    run_experiment,
    validate_config,
)
from app.core.models import ExperimentConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _config(**fields) -> ExperimentConfig:
    data = {"experiment_id": "test", "regime": "lemma_suite", "model": {"name": "trivial"}}
    data.update(fields)
    return ExperimentConfig.model_validate(data)


@pytest.fixture
def tiny_lemma_suite(tmp_path):
    """A lemma-suite config small enough for a unit test run"""
    return _config(
        experiment_id="tiny_trivial",
        engine={"eps_schedule": [0.2, 0.1], "horizons": [1.0], "n_paths": 200, "record_points": 10},
        interface={"n_paths": 200, "exit_eps": 0.1, "exit_deltas": [0.4, 0.2]},
        output={"directory": str(tmp_path / "run"), "sample_paths": 2},
    )


class TestLoadConfig:
    """Test cases for load_config and apply_overrides"""

    def test_unknown_key(self, tmp_path):
        """Test extra keys are schema errors"""
        target = tmp_path / "bad.json"
        target.write_text(json.dumps({
            "experiment_id": "x", "regime": "lemma_suite", "model": {"name": "trivial"}, "colour": "blue",
        }))
        with pytest.raises(ConfigurationError) as excinfo:
            load_config(target)
        assert any("colour" in error for error in excinfo.value.errors)

    def test_missing_file(self, tmp_path):
        """Test an unreadable file is a configuration error"""
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "missing.json")

    def test_negative_eps(self, tmp_path):
        """Test field validators report through ConfigurationError"""
        target = tmp_path / "eps.json"
        target.write_text(json.dumps({
            "experiment_id": "x", "regime": "lemma_suite", "model": {"name": "trivial"},
            "engine": {"eps_schedule": [0.1, -0.1]},
        }))
        with pytest.raises(ConfigurationError) as excinfo:
            load_config(target)
        assert any(error.startswith("engine.eps_schedule") for error in excinfo.value.errors)

    def test_overrides(self):
        """Test the command-line seed and output directory replace the config values"""
        config = apply_overrides(_config(), seed=7, out="elsewhere")
        assert config.engine.master_seed == 7
        assert config.output.directory == "elsewhere"
        unchanged = apply_overrides(config)
        assert unchanged.engine.master_seed == 7

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.json")))
    def test_bundled_configs_are_valid(self, name):
        """Test every bundled config loads and passes validation"""
        config = load_config(CONFIG_DIR / name)
        assert validate_config(config, workers=1) == []


class TestValidateConfig:
    """Test cases for validate_config"""

    def test_drift_regime_needs_zero_sigma(self):
        """Test deviation_drift refuses a model with slow noise"""
        errors = validate_config(_config(regime="deviation_drift", model={"name": "gaussian_diffusion"}))
        assert any("sigma = 0" in error for error in errors)

    def test_longtime_needs_zero_b1(self):
        """Test longtime refuses a model with a slow drift b1"""
        errors = validate_config(_config(regime="longtime", model={"name": "gaussian_diffusion"}))
        assert any("b1 = 0" in error for error in errors)

    def test_y0_dimension(self):
        """Test the initial slow state must match the model dimension"""
        errors = validate_config(_config(engine={"y0": [0.0, 0.0]}))
        assert any("engine.y0" in error for error in errors)

    def test_unknown_model(self):
        """Test an unknown model name is reported"""
        assert validate_config(_config(model={"name": "nope"}))

    def test_bad_override(self):
        """Test an override the model does not take is reported"""
        assert validate_config(_config(model={"name": "trivial", "overrides": {"colour": 1.0}}))

    def test_memory_budget(self):
        """Test an oversized batch is refused before anything runs"""
        config = _config(engine={"eps_schedule": [0.01], "batch_size": 100000})
        errors = validate_config(config, workers=4)
        assert any("budget" in error for error in errors)

    def test_start_fractions(self):
        """Test start fractions outside [0, 1] are reported"""
        errors = validate_config(_config(interface={"start_fractions": [0.0, 1.5]}))
        assert any("start_fractions" in error for error in errors)


class TestRunExperiment:
    """Test cases for run_experiment"""

    def test_unknown_stage(self, tiny_lemma_suite):
        """Test an unknown stage name is refused"""
        with pytest.raises(ValueError):
            run_experiment(tiny_lemma_suite, workers=1, stage="everything")

    def test_invalid_config(self, tmp_path):
        """Test a gated config raises before any output is written"""
        config = _config(
            regime="deviation_drift", model={"name": "gaussian_diffusion"},
            output={"directory": str(tmp_path / "run")},
        )
        with pytest.raises(ConfigurationError) as excinfo:
            run_experiment(config, workers=1)
        assert excinfo.value.errors
        assert not (tmp_path / "run").exists()

    @pytest.mark.slow
    @pytest.mark.integration
    def test_lemma_suite_run(self, tiny_lemma_suite, tmp_path):
        """Test a small lemma suite writes its outputs and is reproducible across worker counts"""
        report = run_experiment(tiny_lemma_suite, workers=1)
        run_dir = tmp_path / "run"
        assert (run_dir / "report.json").is_file()
        assert (run_dir / "summary.csv").is_file()
        assert (run_dir / "plots" / "exit_stats.py").is_file()
        assert report.rows
        assert {row.verdict for row in report.rows} <= {"pass", "fail", "inconclusive"}
        oracles = [row for row in report.rows if row.metric.startswith("oracle:")]
        assert oracles
        assert all(row.verdict == "pass" for row in oracles)
        by_metric = {row.metric: row for row in report.rows}
        bounded = by_metric["theta_second_over_delta4_bounded"]
        assert bounded.verdict == "pass"
        assert bounded.details["deltas"] == [0.4, 0.2]
        assert all(0.8 < ratio < bounded.threshold for ratio in bounded.details["ratios"])
        trend = by_metric["third_moment_over_delta_decreasing"]
        assert trend.verdict == "pass"
        assert trend.details["ratios"] == [0.0, 0.0]
        assert sum(report_summary(report).values()) == len(report.rows)
        assert exit_status(report) == (0 if report.verdict == "pass" else 1)

        loaded = load_report(run_dir / "report.json")
        assert loaded.config == report.config
        assert len(loaded.rows) == len(report.rows)

        twin = apply_overrides(tiny_lemma_suite, out=str(tmp_path / "twin"))
        run_experiment(twin, workers=2)
        assert (run_dir / "summary.csv").read_bytes() == (tmp_path / "twin" / "summary.csv").read_bytes()

    @pytest.mark.slow
    @pytest.mark.integration
    def test_deviation_drift_run(self, tmp_path):
        """Test a small drift-deviation run emits its figures and defers martingale verdicts"""
        config = _config(
            experiment_id="tiny_drift",
            regime="deviation_drift",
            model={"name": "gaussian_drift"},
            engine={
                "eps_schedule": [0.2, 0.1], "horizons": [1.0], "n_paths": 200, "limit_dt": 1e-3,
                "record_points": 10, "batch_size": 100,
            },
            output={"directory": str(tmp_path / "run"), "sample_paths": 2},
        )
        report = run_experiment(config, workers=2)
        plots = sorted(p.name for p in (tmp_path / "run" / "plots").glob("*.py"))
        assert plots == sorted([
            "convergence.py", "sample_paths.py", "local_time_staircase.py", "martingale_residuals.py",
        ])
        martingale = [row for row in report.rows if row.metric.startswith("martingale:")]
        assert martingale
        assert all(row.verdict == "inconclusive" for row in martingale)
        assert any(row.metric.startswith("ks:") for row in report.rows)


if __name__ == "__main__":
    pytest.main([__file__])
