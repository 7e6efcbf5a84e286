"""
Utility functions for trajforge: configuration loading, table formatting
and deterministic number formatting for on-disk files.
"""

import os
from typing import Any, Dict, Optional

import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from src.errors import ConfigError
from src.validator import PipelineConfig


def load_config_from_env(env_file: Optional[str] = None) -> Dict[str, Any]:
    """
    Load runtime settings from environment variables (a .env file is read first).

    Args:
        env_file: Optional explicit .env path

    Returns:
        Dictionary with config values
    """
    load_dotenv(env_file)
    threads = os.environ.get("TRAJFORGE_THREADS", "")
    config = {
        "threads": int(threads) if threads.strip().isdigit() else None,
        "log_file": os.environ.get("TRAJFORGE_LOG_FILE") or None,
    }
    return config


def _coerce(text: str) -> Any:
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    return text


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    """
    Parse `key = value` lines with `#` comments into a PipelineConfig.

    Args:
        text: Config file content
        source: Name used in error messages

    Returns:
        Validated PipelineConfig
    """
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    known = set(PipelineConfig.model_fields)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{number}: unknown config key '{key}'", key=key)
        values[key] = _coerce(value)
        lines[key] = number
    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else None
        where = f"{source}:{lines[key]}" if key in lines else source
        raise ConfigError(f"{where}: invalid value for '{key}': {error['msg']}", key=key) from e


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Load a PipelineConfig from a plain-text file, or the defaults when no path is given.

    Args:
        path: Config file path

    Returns:
        Validated PipelineConfig
    """
    if path is None:
        return PipelineConfig()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r") as f:
        return parse_config_text(f.read(), source=path)


def config_to_text(config: PipelineConfig) -> str:
    """Render a config back to `key = value` lines in field order."""
    lines = []
    for key in PipelineConfig.model_fields:
        value = getattr(config, key)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = fmt(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def fmt(value: float) -> str:
    """Format a float with 17 significant digits, the on-disk convention."""
    text = format(float(value), ".17g")
    return "0" if text == "-0" else text


def format_markdown_table(df: pd.DataFrame) -> str:
    """
    Format DataFrame as markdown table.

    Args:
        df: DataFrame to format

    Returns:
        Markdown table string
    """
    return df.to_markdown(index=False)


def sanitize_filename(name: str) -> str:
    """
    Sanitize an id for use as a filename.

    Args:
        name: String to sanitize

    Returns:
        Sanitized string
    """
    invalid_chars = '<>:"/\\|?* '
    for char in invalid_chars:
        name = name.replace(char, '_')
    return name

