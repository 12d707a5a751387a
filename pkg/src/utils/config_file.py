"""
Plain-text run configuration files.

Format: one ``key = value`` pair per line; ``#`` starts a comment; blank lines
are ignored. Keys are RunConfig field names. Values stay strings here and are
converted by pydantic when the RunConfig is built.
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from models import PROBLEM_PRESETS, Problem, RunConfig

from .errors import ArtifactNotFoundError, ConfigurationError

logger = logging.getLogger(__name__)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse ``key = value`` lines into a dict; later keys override earlier ones."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"Expected 'key = value', got '{raw.strip()}'", path=source, line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError("Missing key before '='", path=source, line=number)
        if key not in RunConfig.model_fields:
            raise ConfigurationError(f"Unknown configuration key '{key}'", path=source, line=number)
        values[key] = value
    return values


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactNotFoundError(str(path), "config file")
    values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    logger.debug(f"Read {len(values)} settings from {path}")
    return values


def build_run_config(
    problem: Optional[Problem] = None,
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, object]] = None,
) -> RunConfig:
    """
    Merge settings in increasing priority: problem preset, config file, flags.

    A ``problem`` key in the file selects the preset when no problem is passed.
    Flags whose value is None are treated as not given.
    """
    file_values = read_config_file(config_path) if config_path else {}
    flag_values = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        chosen = problem or Problem(file_values.get("problem", Problem.PENDULUM.value))
    except ValueError as e:
        raise ConfigurationError(f"Unknown problem '{file_values.get('problem')}'", path=str(config_path)) from e
    merged: Dict[str, object] = {"problem": chosen, **PROBLEM_PRESETS[chosen], **file_values, **flag_values}
    merged["problem"] = chosen
    return RunConfig(**merged)
