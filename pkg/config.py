# config.py
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from core import ConfigError
from models_pydantic import ClusterConfig

# Load environment variables from .env file next to this module, if any
dotenv_path = os.path.join(os.path.dirname(__file__), '.env')
if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path, override=False)


class Settings(BaseSettings):
    """Process-wide settings, read from RMATGEN_* environment variables or .env."""

    # --- General Settings ---
    APP_NAME: str = "rmatgen"
    DEBUG_MODE: bool = False

    # --- Pipeline Defaults ---
    WORKDIR: str = os.path.join(os.getcwd(), 'rmat_work')
    WATCHDOG_SECONDS: float = 60.0
    CHANNEL_CAPACITY: int = 2

    model_config = SettingsConfigDict(
        env_prefix='RMATGEN_',
        env_file='.env',
        env_file_encoding='utf-8',
        extra='ignore',
    )


settings = Settings()

LOG_FORMAT = '%(asctime)s - %(levelname)s - [%(name)s:%(funcName)s] - %(message)s'


def get_logger(name: str) -> logging.Logger:
    log = logging.getLogger(name)
    log.setLevel(logging.DEBUG if settings.DEBUG_MODE else logging.INFO)
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        log.addHandler(handler)
    return log


log = get_logger('config')

# Short names accepted in config files, mapped onto ClusterConfig fields.
KEY_ALIASES = {
    'nb': 'nodes',
    'nc': 'cores',
    'f': 'edge_factor',
    'mmc': 'mem_per_core',
    'c_e': 'block_edges',
    'ce': 'block_edges',
    'mblk': 'packet_bytes',
    'redistribute': 'redistribute_mode',
    'jitter': 'jitter_ms',
    'watchdog': 'watchdog_seconds',
}

SIZE_SUFFIXES = {
    'k': 1000, 'kb': 1000, 'kib': 1 << 10,
    'm': 1000 ** 2, 'mb': 1000 ** 2, 'mib': 1 << 20,
    'g': 1000 ** 3, 'gb': 1000 ** 3, 'gib': 1 << 30,
}


def parse_size(value: Any) -> int:
    """Parse a byte size such as 8388608, '512KiB' or '8MiB'."""
    if isinstance(value, int):
        return value
    text = str(value).strip().lower().replace('_', '')
    digits = text.rstrip('abcdefghijklmnopqrstuvwxyz')
    suffix = text[len(digits):]
    if not digits:
        raise ConfigError(f"Not a valid size: '{value}'")
    if suffix and suffix not in SIZE_SUFFIXES:
        raise ConfigError(f"Unknown size suffix in '{value}'")
    try:
        return int(float(digits) * SIZE_SUFFIXES.get(suffix, 1))
    except ValueError as e:
        raise ConfigError(f"Not a valid size: '{value}'") from e


def _normalize_key(key: str) -> str:
    key = key.strip().lower().replace('-', '_')
    if key.startswith('rmatgen_'):
        key = key[len('rmatgen_'):]
    return KEY_ALIASES.get(key, key)


def _expand(values: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(values)
    params = out.pop('rmat_params', None)
    if params is not None:
        parts = params.split(',') if isinstance(params, str) else list(params)
        if len(parts) != 4:
            raise ConfigError(f"rmat_params needs four comma-separated values, got '{params}'")
        for name, raw in zip(('rmat_a', 'rmat_b', 'rmat_c', 'rmat_d'), parts):
            out[name] = float(raw)
    for name in ('mem_per_core', 'packet_bytes'):
        if name in out and out[name] is not None:
            out[name] = parse_size(out[name])
    return out


def load_cluster_config(config_file: Optional[str] = None,
                        overrides: Optional[Dict[str, Any]] = None) -> ClusterConfig:
    """Resolve a ClusterConfig from settings defaults, a KEY=VALUE file and explicit overrides.

    Later sources win. Every violation surfaces as ConfigError.
    """
    values: Dict[str, Any] = {
        'workdir': settings.WORKDIR,
        'watchdog_seconds': settings.WATCHDOG_SECONDS,
        'channel_capacity': settings.CHANNEL_CAPACITY,
    }
    if config_file:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"Config file not found: '{config_file}'")
        raw = dotenv_values(path)
        values.update({_normalize_key(k): v for k, v in raw.items() if v is not None})
        log.debug(f"Loaded {len(raw)} keys from config file '{config_file}'")
    if overrides:
        values.update({_normalize_key(k): v for k, v in overrides.items() if v is not None})

    try:
        cfg = ClusterConfig(**_expand(values))
    except ValidationError as e:
        problems = '; '.join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid cluster configuration: {problems}") from e
    except ValueError as e:
        raise ConfigError(f"Invalid cluster configuration: {e}") from e
    log.debug(f"Resolved cluster config: scale={cfg.scale} nb={cfg.nodes} nc={cfg.cores} "
              f"mmc={cfg.mem_per_core} C_e={cfg.block_edges}")
    return cfg


if __name__ == "__main__":
    print("\n--- Configuration Settings Loaded ---")
    print(f"  Debug Mode: {settings.DEBUG_MODE}")
    print(f"  Workdir: {settings.WORKDIR}")
    print(f"  Watchdog Seconds: {settings.WATCHDOG_SECONDS}")
    print(f"  Channel Capacity: {settings.CHANNEL_CAPACITY}")
    print("--- End Configuration ---")
