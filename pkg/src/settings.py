# src/settings.py
"""
Runtime settings.

Resolution order for every value:
  1. environment variable (PIPE_*)
  2. config/pipeline.toml  ([pipeline] table)
  3. built-in default below

Change defaults HERE only; the CLI, the control API and the dashboard all
call load_settings().
"""

from __future__ import annotations

import logging
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, ValidationError

from src.errors import ConfigError

# -- locate project root & config file ---------------------------------------
PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIG_PATH = PROJECT_ROOT / "config" / "pipeline.toml"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# env var -> settings field
_ENV_KEYS: Dict[str, str] = {
    "PIPE_COOKIE": "cookie",
    "PIPE_MTU": "mtu",
    "PIPE_LOG_LEVEL": "log_level",
    "PIPE_TRACE_DIR": "trace_dir",
    "PIPE_RECONFIG_RATE": "reconfig_rate",
}


class QuotaDefaults(BaseModel):
    parser_actions: int = Field(10, ge=0, le=10)
    cam_entries: int = Field(4, ge=0, le=16)
    memory_words: int = Field(16, ge=0, le=255)


class PipelineSettings(BaseModel):
    cookie: int = Field(0x5EC0_0C1E, ge=0, lt=1 << 32)
    mtu: int = Field(1500, ge=128, le=9000)
    log_level: str = "WARNING"
    trace_dir: str = "traces"
    # daisy-chain packets consumed per simulated tick during a session
    reconfig_rate: int = Field(4, ge=1)
    quota: QuotaDefaults = QuotaDefaults()

    @property
    def max_frame(self) -> int:
        # Ethernet + 802.1Q header on top of the MTU
        return self.mtu + 18


def _load_toml(path: Path) -> dict:
    """Config file is optional; a broken one is an error, a missing one is not."""
    if not path.exists():
        return {}
    try:
        with path.open("rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def _env_value(raw: str) -> Any:
    # cookies are usually written in hex
    try:
        return int(raw, 0)
    except ValueError:
        return raw


def load_settings(path: Optional[Path] = None, env: Optional[Dict[str, str]] = None) -> PipelineSettings:
    """Env var first, pipeline.toml fallback, defaults last."""
    env = os.environ if env is None else env
    data: Dict[str, Any] = dict(_load_toml(path or CONFIG_PATH).get("pipeline", {}))
    for env_key, field in _ENV_KEYS.items():
        val = env.get(env_key, "")
        if val:
            data[field] = _env_value(val)
    try:
        return PipelineSettings(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid pipeline settings: {e}") from e


def configure_logging(level: Optional[str] = None) -> None:
    """Install one stream handler on the package root logger (idempotent)."""
    root = logging.getLogger("src")
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    root.setLevel((level or load_settings().log_level).upper())
