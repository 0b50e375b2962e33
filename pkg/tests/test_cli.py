"""Tests for CLI functionality."""

import io
import json
from pathlib import Path
import tempfile
from unittest.mock import patch

import pytest

from bayescl_bench import experiments
from bayescl_bench.cli import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_VALIDATION,
    build_parser,
    load_run_config,
    main,
)
from bayescl_bench.config import ConfigError, ExperimentKind


def run_main(*argv):
    """Run the CLI and return (exit code, stdout, stderr)."""
    stdout, stderr = io.StringIO(), io.StringIO()
    with (
        patch("sys.argv", ["bayescl", *argv]),
        patch("sys.stdout", stdout),
        patch("sys.stderr", stderr),
    ):
        code = main()
    return code, stdout.getvalue(), stderr.getvalue()


class TestRunCommand:
    """Test ``bayescl run``."""

    def setup_method(self):
        """Set up a scratch directory."""
        self.tmpdir = tempfile.TemporaryDirectory()
        self.root = Path(self.tmpdir.name)

    def teardown_method(self):
        """Remove the scratch directory."""
        self.tmpdir.cleanup()

    def test_filter_run(self):
        """Test a filter run over two seeds succeeds and writes the aggregate."""
        out = self.root / "results"
        code, stdout, _ = run_main("run", "filter", "--seeds", "2", "--out", str(out))
        assert code == EXIT_OK
        assert "✓ seed 0" in stdout
        assert "✓ seed 1" in stdout
        aggregate = json.loads((out / "aggregate.json").read_text())
        assert aggregate["seeds"] == [0, 1]

    def test_filter_scenario(self):
        """Test the scenario flag picks the imbalanced stream."""
        out = self.root / "results"
        code, _, _ = run_main(
            "run", "filter", "--scenario", "imbalanced", "--out", str(out)
        )
        assert code == EXIT_OK
        summary = json.loads((out / "seed_0" / "summary.json").read_text())
        assert summary["expected_final_mean"] == pytest.approx(180 / 221)

    def test_bad_scenario(self):
        """Test an unknown scenario is a validation error."""
        out = self.root / "results"
        code, _, stderr = run_main(
            "run", "filter", "--scenario", "sideways", "--out", str(out)
        )
        assert code == EXIT_VALIDATION
        assert "filter.scenario" in stderr
        assert not out.exists()

    def test_missing_data_root(self):
        """Test a missing dataset directory stops the run before any artifact."""
        out = self.root / "results"
        code, _, stderr = run_main(
            "run",
            "vcl",
            "--dataset",
            "split-mnist",
            "--data-root",
            str(self.root / "absent"),
            "--out",
            str(out),
        )
        assert code == EXIT_VALIDATION
        assert "data.root" in stderr
        assert not out.exists()

    def test_invalid_config_file(self):
        """Test a malformed configuration file reports its line."""
        config = self.root / "exp.json"
        config.write_text('{\n  "kind": "filter",\n  "seeds": [1,,2]\n}\n')
        code, _, stderr = run_main("run", "filter", "--config", str(config))
        assert code == EXIT_VALIDATION
        assert "Error at line 3" in stderr

    def test_config_kind_mismatch(self):
        """Test the file's kind must match the command's."""
        config = self.root / "exp.json"
        config.write_text('{"kind": "sgd"}')
        code, _, stderr = run_main("run", "filter", "--config", str(config))
        assert code == EXIT_VALIDATION
        assert "sgd experiment" in stderr

    def test_config_file_run(self):
        """Test settings from the file are used and flags override them."""
        config = self.root / "exp.json"
        out = self.root / "from-file"
        config.write_text(
            json.dumps(
                {
                    "kind": "filter",
                    "seeds": [5],
                    "out_dir": str(self.root / "ignored"),
                    "filter": {"scenario": "custom", "n_first": 4, "n_second": 3},
                }
            )
        )
        code, _, _ = run_main(
            "run", "filter", "--config", str(config), "--out", str(out)
        )
        assert code == EXIT_OK
        lines = (out / "seed_5" / "trajectory.csv").read_text().splitlines()
        assert len(lines) == 8
        assert not (self.root / "ignored").exists()

    def test_failed_seed_exit_code(self):
        """Test a failing seed gives the failure exit code."""

        def broken(config, seed, out):
            raise RuntimeError("boom")

        out = self.root / "results"
        with patch.dict(experiments.RUNNERS, {ExperimentKind.FILTER: broken}):
            code, _, stderr = run_main("run", "filter", "--out", str(out))
        assert code == EXIT_FAILURE
        assert "RuntimeError: boom" in stderr
        assert (out / "seed_0" / "FAILED").exists()

    def test_bad_seeds(self):
        """Test an unreadable seed list is a validation error."""
        code, _, stderr = run_main(
            "run", "filter", "--seeds", "x,y", "--out", str(self.root / "r")
        )
        assert code == EXIT_VALIDATION
        assert "seeds" in stderr


class TestValidateCommand:
    """Test ``bayescl validate``."""

    def setup_method(self):
        """Set up a scratch directory."""
        self.tmpdir = tempfile.TemporaryDirectory()
        self.root = Path(self.tmpdir.name)

    def teardown_method(self):
        """Remove the scratch directory."""
        self.tmpdir.cleanup()

    def test_valid_file(self):
        """Test a valid file echoes its resolved defaults."""
        config = self.root / "exp.json"
        config.write_text('{"kind": "hmc-cl"}')
        code, stdout, _ = run_main("validate", "--config", str(config))
        assert code == EXIT_OK
        assert "Resolved configuration:" in stdout
        resolved = json.loads(stdout.split("Resolved configuration:")[1])
        assert resolved["hmc"]["n_chains"] == 20
        assert resolved["gmm"]["candidates"] == [1, 2, 3, 5, 8, 10]

    def test_warnings_still_pass(self):
        """Test unknown keys warn but do not fail validation."""
        config = self.root / "exp.json"
        config.write_text('{"kind": "filter", "seed": 3}')
        code, stdout, _ = run_main("validate", "--config", str(config))
        assert code == EXIT_OK
        assert "did you mean 'seeds'?" in stdout

    def test_errors_fail(self):
        """Test field errors give the validation exit code."""
        config = self.root / "exp.json"
        config.write_text('{"kind": "hmc-cl", "hmc": {"step_size": 0}}')
        code, stdout, _ = run_main("validate", "--config", str(config))
        assert code == EXIT_VALIDATION
        assert "Resolved configuration:" not in stdout

    def test_missing_file(self):
        """Test a missing file is reported on stderr."""
        code, _, stderr = run_main(
            "validate", "--config", str(self.root / "absent.json")
        )
        assert code == EXIT_VALIDATION
        assert "not found" in stderr


class TestParser:
    """Test argument parsing and override resolution."""

    def test_version(self):
        """Test --version exits cleanly."""
        with patch("sys.stdout", io.StringIO()) as out:
            with pytest.raises(SystemExit) as exc_info:
                build_parser().parse_args(["--version"])
        assert exc_info.value.code == 0
        assert out.getvalue().startswith("bayescl")

    def test_unknown_kind(self):
        """Test unknown experiment kinds are rejected by argparse."""
        with patch("sys.stderr", io.StringIO()):
            with pytest.raises(SystemExit) as exc_info:
                build_parser().parse_args(["run", "ewc"])
        assert exc_info.value.code == 2

    def test_overrides(self):
        """Test flags override the defaults."""
        args = build_parser().parse_args(
            [
                "run",
                "vcl",
                "--seeds",
                "1,4",
                "--threads",
                "2",
                "--head-mode",
                "multi",
                "--scenario",
                "domain-incremental",
                "--dataset",
                "surrogate",
            ]
        )
        config = load_run_config(args)
        assert config.seeds == (1, 4)
        assert config.threads == 2
        assert config.head_mode.value == "multi"
        assert config.data.scenario.value == "domain-incremental"
        assert config.data.name == "surrogate"

    def test_bad_labelling_scenario(self):
        """Test a filter preset is not a labelling scenario."""
        args = build_parser().parse_args(["run", "sgd", "--scenario", "balanced"])
        with pytest.raises(ConfigError) as exc_info:
            load_run_config(args)
        assert exc_info.value.key == "data.scenario"
