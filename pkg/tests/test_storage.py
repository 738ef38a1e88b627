"""
Tests for path and table persistence
"""

import numpy as np
import pandas as pd
import pytest

from app.core.models import ConvergenceTable, StatReport
from app.core.registry import build_model
from app.core.sde_engine import grid_for, simulate_full_batch
from app.core.storage import (
    read_frame,
    read_paths,
    summary_frame,
    write_frame,
    write_paths,
    write_summary,
    write_table,
)


@pytest.fixture
def batch():
    """Three short prelimit paths of a two-dimensional model"""
    model = build_model("gaussian_diffusion", {"d": 2})
    return simulate_full_batch(model, 0.2, 0.0, [0.1, -0.1], grid_for(0.1, 0.2), seed=5, path_indices=[4, 5, 6])


class TestPathFiles:
    """Test cases for the binary path layout"""

    def test_write_then_read(self, batch, tmp_path):
        """Test a stored batch comes back unchanged"""
        target = write_paths(tmp_path / "paths.nrsp", batch)
        loaded = read_paths(target)
        np.testing.assert_array_equal(loaded.x, batch.x)
        np.testing.assert_array_equal(loaded.y_slow, batch.y_slow)
        np.testing.assert_array_equal(loaded.dw, batch.dw)
        np.testing.assert_array_equal(loaded.path_indices, [4, 5, 6])
        assert loaded.grid.n_steps == batch.grid.n_steps
        assert loaded.grid.dt == batch.grid.dt
        assert loaded.eps == 0.2
        assert loaded.seed == 5
        assert loaded.regime == "standard"

    def test_bad_magic(self, tmp_path):
        """Test a foreign file is refused"""
        target = tmp_path / "other.bin"
        target.write_bytes(b"XXXX" + bytes(200))
        with pytest.raises(ValueError):
            read_paths(target)

    def test_truncated_file(self, batch, tmp_path):
        """Test a cut-off file is refused"""
        target = write_paths(tmp_path / "paths.nrsp", batch)
        raw = target.read_bytes()
        target.write_bytes(raw[:-8])
        with pytest.raises(ValueError):
            read_paths(target)


class TestFrames:
    """Test cases for CSV exports"""

    def test_title_line(self, tmp_path):
        """Test the optional title is written as a comment line"""
        target = write_frame(pd.DataFrame({"eps": [0.1], "value": [1.0 / 3.0]}), tmp_path / "t.csv", title="Exit table")
        lines = target.read_text().splitlines()
        assert lines[0] == "# Exit table"
        assert lines[1] == "eps,value"
        assert lines[2] == "0.10000000000000001,0.33333333333333331"
        assert read_frame(target)["value"][0] == pytest.approx(1.0 / 3.0, rel=1e-15)

    def test_table_export(self, tmp_path):
        """Test a convergence table is written under its title"""
        table = ConvergenceTable(title="Boundary increments", rows=[{"eps": 0.1, "p_plus": 0.5}])
        target = write_table(table, tmp_path / "increments.csv")
        assert target.read_text().startswith("# Boundary increments\n")

    def test_summary_excludes_wall_time(self, tmp_path):
        """Test the summary columns and that reruns with other wall times are byte-identical"""
        row = StatReport(experiment_id="e", metric="m", value=0.1, threshold=0.2, verdict="pass", wall_time=1.5)
        frame = summary_frame([row])
        assert list(frame.columns) == [
            "experiment_id", "metric", "value", "target", "stderr", "threshold", "verdict", "n_samples",
        ]
        first = write_summary([row], tmp_path / "a.csv").read_bytes()
        second = write_summary([row.model_copy(update={"wall_time": 9.0})], tmp_path / "b.csv").read_bytes()
        assert first == second


if __name__ == "__main__":
    pytest.main([__file__])
