"""
Tests for the command-line interface
"""

import json
from pathlib import Path

import pytest

from app.cli.app import create_parser, run_cli
from app.cli.commands import EXIT_CONFIG, EXIT_PASS
from app.core.registry import list_models

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestParser:
    """Test cases for create_parser"""

    @pytest.fixture
    def parser(self):
        return create_parser()

    def test_global_flags_before_subcommand(self, parser):
        """Test flags given before the subcommand survive the subparser"""
        args = parser.parse_args(["--seed", "11", "--workers", "3", "run", "cfg.json"])
        assert args.seed == 11
        assert args.workers == 3
        assert args.stage == "all"
        assert args.no_plots is False

    def test_global_flags_after_subcommand(self, parser):
        """Test flags given after the subcommand are accepted too"""
        args = parser.parse_args(["compare", "cfg.json", "--seed", "5", "--out", "somewhere"])
        assert args.seed == 5
        assert args.out == "somewhere"
        assert args.workers is None
        assert args.stage == "compare"

    def test_interface_stage(self, parser):
        """Test interface-stats maps onto the interface stage"""
        args = parser.parse_args(["interface-stats", "cfg.json", "--no-plots"])
        assert args.stage == "interface"
        assert args.no_plots is True

    def test_subcommand_required(self, parser):
        """Test a bare invocation is a usage error"""
        with pytest.raises(SystemExit):
            parser.parse_args([])


class TestCommands:
    """Test cases for the subcommand handlers"""

    def test_list_models(self, capsys):
        """Test every bundled model is listed"""
        assert run_cli(["list-models"]) == EXIT_PASS
        out = capsys.readouterr().out
        for name in list_models():
            assert name in out

    def test_validate_bundled_config(self, capsys):
        """Test a bundled config validates"""
        code = run_cli(["--workers", "1", "validate-config", str(CONFIG_DIR / "deviation_drift.json")])
        assert code == EXIT_PASS
        assert "ok" in capsys.readouterr().out

    def test_validate_bad_config(self, tmp_path, capsys):
        """Test schema problems give exit code 2 and are listed"""
        target = tmp_path / "bad.json"
        target.write_text(json.dumps({"experiment_id": "x", "regime": "sideways", "model": {"name": "trivial"}}))
        assert run_cli(["validate-config", str(target)]) == EXIT_CONFIG
        assert "regime" in capsys.readouterr().out

    def test_validate_gated_config(self, tmp_path, capsys):
        """Test regime gating failures give exit code 2"""
        target = tmp_path / "gated.json"
        target.write_text(json.dumps({
            "experiment_id": "x", "regime": "longtime", "model": {"name": "gaussian_diffusion"},
        }))
        assert run_cli(["validate-config", str(target)]) == EXIT_CONFIG
        assert "b1 = 0" in capsys.readouterr().out

    def test_run_invalid_config(self, tmp_path):
        """Test run refuses a gated config with exit code 2"""
        target = tmp_path / "gated.json"
        target.write_text(json.dumps({
            "experiment_id": "x", "regime": "deviation_drift", "model": {"name": "gaussian_diffusion"},
        }))
        assert run_cli(["run", str(target), "--out", str(tmp_path / "run")]) == EXIT_CONFIG

    def test_plots_without_report(self, tmp_path):
        """Test plots on a directory without report.json gives exit code 2"""
        assert run_cli(["plots", str(tmp_path)]) == EXIT_CONFIG


if __name__ == "__main__":
    pytest.main([__file__])
