"""Parsing experiment files with line-level error reports."""

from abc import ABC, abstractmethod
import json
import re
from typing import Any, TypeAlias

from .config import ConfigError, ExperimentConfig, build_config

ValidationResult: TypeAlias = tuple[bool, dict[str, Any] | None]


class BaseConfigParser(ABC):
    """Abstract base class for configuration parsers."""

    @abstractmethod
    def parse(self, content: str) -> Any:
        """Parse content and return structured representation.

        Args:
            content: The content as a string

        Returns:
            The parsed structure

        Raises:
            ValueError: If the content is malformed or a field is invalid

        """

    def validate(self, content: str) -> ValidationResult:
        """Validate if the content can be parsed.

        Args:
            content: The content as a string

        Returns:
            ValidationResult containing:
            - bool: True if content can be parsed successfully, False otherwise
            - Optional[Dict]: Error information if parsing failed, None if successful.
              Contains 'reason' (str), 'line' (int), 'error_text' (str)

        """
        try:
            self.parse(content)
            return True, None
        except ValueError as e:
            return False, self._extract_error_info(content, e)
        except Exception as e:
            error_info = {
                "reason": f"Unexpected error: {type(e).__name__}",
                "line": 1,
                "error_text": str(e),
            }
            return False, error_info

    def _extract_error_info(self, content: str, exception: Exception) -> dict[str, Any]:
        """Locate the line an error refers to.

        JSON syntax errors carry their own line number. Field errors name a dotted
        key; the first line mentioning its last component is reported.
        """
        lines = content.split("\n")
        error_msg = str(exception)

        line_num = 1
        if getattr(exception, "lineno", None):
            line_num = exception.lineno
        elif getattr(exception, "key", None):
            needle = f'"{exception.key.split(".")[-1]}"'
            for i, line in enumerate(lines, start=1):
                if needle in line:
                    line_num = i
                    break
        else:
            line_match = re.search(r"line (\d+)", error_msg, re.IGNORECASE)
            if line_match:
                line_num = int(line_match.group(1))

        error_text = ""
        if 1 <= line_num <= len(lines):
            error_text = lines[line_num - 1].strip()

        return {
            "reason": error_msg,
            "line": line_num,
            "error_text": error_text,
        }

    def validate_from_file(self, filepath: str) -> ValidationResult:
        """Validate if the file can be parsed.

        Args:
            filepath: Path to the file

        Returns:
            ValidationResult, as for :meth:`validate`

        """
        try:
            with open(filepath, encoding="utf-8") as f:
                content = f.read()
        except OSError as e:
            error_info = {
                "reason": f"Failed to read file: {e}",
                "line": 1,
                "error_text": filepath,
            }
            return False, error_info
        return self.validate(content)

    def parse_from_file(self, filepath: str) -> Any:
        """Parse file and return structured representation.

        Raises:
            ValueError: If the file is malformed or a field is invalid
            OSError: If the file cannot be read

        """
        with open(filepath, encoding="utf-8") as f:
            content = f.read()
        return self.parse(content)


class ConfigParser(BaseConfigParser):
    """Parses JSON experiment files into :class:`ExperimentConfig`.

    With ``check_paths`` set, a dataset directory that does not exist is a
    validation error.
    """

    def __init__(self, check_paths: bool = True):
        self.check_paths = check_paths

    def parse_json(self, content: str) -> Any:
        if not content.strip():
            raise ConfigError("configuration file is empty")
        return json.loads(content)

    def parse(self, content: str) -> ExperimentConfig:
        config = build_config(self.parse_json(content))
        if self.check_paths:
            config.check_paths()
        return config
