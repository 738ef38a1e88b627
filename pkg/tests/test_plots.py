"""
Tests for plot-script emission
"""

import pytest

from app.core.exceptions import PlotDependencyError
from app.core.models import ExperimentConfig, ExperimentReport, ModelSection, Provenance, StatReport
from app.core.plots import emit_plots, figure_set, render_script


def _report(regime: str, model: str, artifacts=None, rows=True) -> ExperimentReport:
    config = ExperimentConfig(experiment_id="plots", regime=regime, model=ModelSection(name=model))
    stat = StatReport(experiment_id="plots", metric="ks:x@t=1", value=0.01, threshold=0.06, verdict="pass")
    return ExperimentReport(
        config=config,
        rows=[stat] if rows else [],
        provenance=Provenance(code_version="test", wall_time=0.0, workers=1),
        artifacts=artifacts or {},
    )


@pytest.fixture
def deviation_run(tmp_path):
    """A run directory holding the CSVs a deviation report points at"""
    artifacts = {
        "marginals": "tables/marginals.csv",
        "limit_samples": "tables/limit_samples.csv",
        "summary": "summary.csv",
    }
    for relative in artifacts.values():
        target = tmp_path / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("a\n1\n")
    return tmp_path, _report("deviation_drift", "gaussian_drift", artifacts)


class TestFigureSet:
    """Test cases for figure_set"""

    def test_no_rows_no_figures(self):
        """Test a report without rows asks for nothing"""
        assert figure_set(_report("deviation_drift", "gaussian_drift", rows=False)) == []

    def test_deviation_figures(self):
        """Test the deviation regimes share one figure set"""
        names = figure_set(_report("deviation_diffusive", "gaussian_diffusion"))
        assert names == ["convergence", "sample_paths", "local_time_staircase", "martingale_residuals"]

    def test_longtime_figures(self):
        """Test the long-time regime adds increment and occupation figures"""
        names = figure_set(_report("longtime", "gaussian_longtime"))
        assert len(names) == 6
        assert names[-2:] == ["boundary_increments", "occupation"]

    def test_lemma_suite_figures(self):
        """Test the lemma suite plots exit statistics only when they were written"""
        assert figure_set(_report("lemma_suite", "trivial")) == []
        assert figure_set(_report("lemma_suite", "trivial", {"exit_stats": "tables/exit.csv"})) == ["exit_stats"]


class TestEmitPlots:
    """Test cases for emit_plots"""

    def test_scripts_written(self, deviation_run):
        """Test one valid script per figure under plots/"""
        out_dir, report = deviation_run
        written = emit_plots(report, out_dir)
        assert sorted(written) == sorted(figure_set(report))
        for name, path in written.items():
            assert path == out_dir / "plots" / f"{name}.py"
            compile(path.read_text(), str(path), "exec")

    def test_script_reads_relative_paths(self):
        """Test the artifact path is substituted into the script"""
        script = render_script("convergence", {"marginals": "tables/marginals.csv"})
        assert 'read("tables/marginals.csv")' in script
        assert 'matplotlib.use("Agg")' in script

    def test_missing_csv(self, deviation_run):
        """Test a missing artifact file raises PlotDependencyError"""
        out_dir, report = deviation_run
        (out_dir / "tables" / "marginals.csv").unlink()
        with pytest.raises(PlotDependencyError):
            emit_plots(report, out_dir)
        assert not (out_dir / "plots").exists()

    def test_missing_artifact_key(self, tmp_path):
        """Test a report without the needed artifact raises PlotDependencyError"""
        with pytest.raises(PlotDependencyError):
            emit_plots(_report("longtime", "gaussian_longtime"), tmp_path)


if __name__ == "__main__":
    pytest.main([__file__])
