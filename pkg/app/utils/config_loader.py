"""
Run configuration loading
TOML file + environment + CLI overrides, validated into a RunConfig
"""

import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from app.models.config import RunConfig
from app.models.errors import ConfigError

ENV_LOG_LEVEL = "FORMULAHUNTER_LOG_LEVEL"
ENV_OUTPUT_DIR = "FORMULAHUNTER_OUTPUT_DIR"
ENV_THREADS = "FORMULAHUNTER_THREADS"

DEFAULT_OUTPUT_DIR = "output"


def _format_errors(error: ValidationError):
    messages = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "config"
        messages.append(f"{location}: {item['msg']}")
    return messages


def _merge(target: Dict[str, Any], section: str, key: str, value: Any):
    target.setdefault(section, {})
    if isinstance(target[section], dict):
        target[section][key] = value


def load_config(
    path: Optional[Union[str, Path]] = None,
    out: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> RunConfig:
    """
    Build a validated RunConfig

    Precedence: CLI arguments, then FORMULAHUNTER_* environment variables,
    then the TOML file, then model defaults.

    Raises:
        ConfigError: one message per failing field
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([f"{path}: {e}"]) from e

    env_out = os.getenv(ENV_OUTPUT_DIR)
    env_threads = os.getenv(ENV_THREADS)
    if env_out:
        _merge(raw, "paths", "output_dir", env_out)
    if env_threads:
        raw["threads"] = env_threads

    if out is not None:
        _merge(raw, "paths", "output_dir", str(out))
    if seed is not None:
        _merge(raw, "seeds", "base", seed)
    if threads is not None:
        raw["threads"] = threads

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from e
    return config


def output_dir(config: RunConfig) -> Path:
    return Path(config.paths.output_dir or DEFAULT_OUTPUT_DIR)


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON form; file formatting does not affect it"""
    canonical = config.model_dump(mode="json")
    # output location and thread count stay out of the hash
    canonical.get("paths", {}).pop("output_dir", None)
    canonical.pop("threads", None)
    text = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
