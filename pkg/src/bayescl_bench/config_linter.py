"""Lint experiment files for mistakes the parser lets through.

Unknown keys are ignored by the parser; the linter reports them together with the
closest valid key. It also flags missing dataset directories, empty seed lists and
settings that parse but are unlikely to be intended.
"""

import difflib
from pathlib import Path
from typing import Any

from .config import SECTIONS, TOP_LEVEL_KEYS, ConfigError, ExperimentKind
from .config_parser import ConfigParser


class ConfigIssue:
    """Represents a configuration issue.

    Attributes:
        severity: 'warning' or 'error'
        message: Description of the issue
        key: Dotted name of the field concerned (optional)

    """

    def __init__(self, severity: str, message: str, key: str | None = None):
        self.severity = severity
        self.message = message
        self.key = key


def nearest_key(key: str, candidates: list[str] | tuple[str, ...]) -> str | None:
    matches = difflib.get_close_matches(key, list(candidates), n=1, cutoff=0.5)
    return matches[0] if matches else None


class ConfigLinter:
    """Simple linter for experiment configuration files."""

    def __init__(self):
        self.parser = ConfigParser(check_paths=False)
        self.warnings = 0
        self.errors = 0

    def lint(self, content: str) -> list[ConfigIssue]:
        """Lint configuration content and return list of issues.

        Args:
            content: The JSON document as a string

        Returns:
            list[ConfigIssue]: List of issues found

        """
        try:
            data = self.parser.parse_json(content)
        except ValueError as e:
            return [ConfigIssue("error", f"Failed to parse content: {e}")]

        issues = []
        if isinstance(data, dict):
            issues.extend(self._check_keys(data))
        try:
            config = self.parser.parse(content)
        except ConfigError as e:
            issues.append(ConfigIssue("error", str(e), e.key))
            return issues

        issues.extend(self._check_dataset(config))
        issues.extend(self._check_values(config))
        return issues

    def lint_from_file(self, file_path: Path) -> list[ConfigIssue]:
        try:
            with open(file_path, encoding="utf-8") as f:
                content = f.read()
            return self.lint(content)
        except OSError as e:
            return [ConfigIssue("error", f"Failed to read file: {e}")]

    def _check_keys(self, data: dict[str, Any]) -> list[ConfigIssue]:
        """Unknown keys at the top level and inside sections."""
        issues = []
        top = (*TOP_LEVEL_KEYS, *SECTIONS)
        for key, value in data.items():
            if key not in top:
                issues.append(self._unknown(key, top))
                continue
            if key in SECTIONS and isinstance(value, dict):
                known = tuple(SECTIONS[key].__dataclass_fields__)
                for sub in value:
                    if sub not in known:
                        issues.append(self._unknown(sub, known, section=key))
        return issues

    def _unknown(
        self, key: str, candidates: tuple[str, ...], section: str | None = None
    ) -> ConfigIssue:
        dotted = f"{section}.{key}" if section else key
        hint = nearest_key(key, candidates)
        message = f"Unknown key '{dotted}' is ignored"
        if hint:
            message += f" (did you mean '{hint}'?)"
        return ConfigIssue("warning", message, dotted)

    def _check_dataset(self, config) -> list[ConfigIssue]:
        issues = []
        data = config.data
        if data.root is not None and not Path(data.root).is_dir():
            issues.append(
                ConfigIssue("error", f"Dataset path {data.root} not found", "data.root")
            )
        needs_images = config.kind in (
            ExperimentKind.PROTOCL,
            ExperimentKind.VCL,
            ExperimentKind.SGD,
            ExperimentKind.HMC_CL,
        )
        image_data = data.name in ("split-mnist", "split-fmnist")
        if needs_images and image_data and data.root is None:
            issues.append(
                ConfigIssue(
                    "warning",
                    f"No data.root for {data.name}; the synthetic surrogate is used",
                    "data.root",
                )
            )
        return issues

    def _check_values(self, config) -> list[ConfigIssue]:
        """Settings that parse but are probably not what was meant."""
        issues = []
        if config.kind is ExperimentKind.HMC_CL:
            if config.hmc.n_samples < 100:
                issues.append(
                    ConfigIssue(
                        "warning",
                        "hmc.n_samples below 100 leaves ESS undefined; "
                        "the convergence gate is skipped",
                        "hmc.n_samples",
                    )
                )
            if config.hmc.step_size > 0.1:
                issues.append(
                    ConfigIssue(
                        "warning",
                        f"hmc.step_size {config.hmc.step_size} is large for BNNs",
                        "hmc.step_size",
                    )
                )
            if not config.data.is_toy:
                issues.append(
                    ConfigIssue(
                        "warning",
                        "HMC on image streams is far beyond desk scale",
                        "data.name",
                    )
                )
        if config.kind is ExperimentKind.PROTOCL and config.protocl.coreset_size == 0:
            issues.append(
                ConfigIssue(
                    "warning",
                    "protocl.coreset_size 0 trains without replay",
                    "protocl.coreset_size",
                )
            )
        if config.coreset_sizes and config.kind is not ExperimentKind.PROTOCL:
            issues.append(
                ConfigIssue(
                    "warning",
                    "coreset_sizes is only used by protocl experiments",
                    "coreset_sizes",
                )
            )
        return issues

    def print_issues(self, file_path: Path, issues: list[ConfigIssue]):
        """Print issues for a file."""
        if not issues:
            print(f"✓ {file_path.name}")
            return

        print(f"⚠ {file_path.name}")

        for issue in issues:
            location = f"[{issue.key}] " if issue.key else ""
            message = f"{location}{issue.message}"

            if issue.severity == "error":
                print(f"  ❌ {message}")
                self.errors += 1
            else:
                print(f"  ⚠️  {message}")
                self.warnings += 1

        print()

    def print_summary(self, files_analyzed: int) -> int:
        """Print final summary and return the exit code."""
        print("─────────────────────────────────")
        print("Summary:")
        print(f"  Files analyzed: {files_analyzed}")
        print(f"  Warnings: {self.warnings}")
        print(f"  Errors: {self.errors}")

        if self.errors > 0:
            print("\n❌ Errors found - fix before running")
            return 2
        elif self.warnings > 0:
            print("\n⚠️  Warnings found - review recommended")
            return 0
        else:
            print("\n✓ No issues found")
            return 0
