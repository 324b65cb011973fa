try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError
from .schemas import SimConfig


class Settings(BaseSettings):
    SIM_OUTPUT_DIR: str = "results"
    SIM_LOG_LEVEL: str = "INFO"
    SIM_THREADS: int = 1
    SIM_SEED: int = 2024

    # Output files are written under a FileLock
    SIM_LOCK_TIMEOUT: float = 10.0

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")


settings = Settings()


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_sim_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> SimConfig:
    """
    Build a SimConfig from an optional TOML file plus overrides.

    Environment defaults fill in seed, threads and output directory when
    neither the file nor the overrides set them.
    """
    data: Dict[str, Any] = {
        "master_seed": settings.SIM_SEED,
        "threads": settings.SIM_THREADS,
        "output_dir": settings.SIM_OUTPUT_DIR,
    }
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = _merge(data, tomllib.load(fh))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    if overrides:
        data = _merge(data, overrides)
    try:
        return SimConfig.model_validate(data)
    except ValidationError as e:
        where = f" in {path}" if path is not None else ""
        raise ConfigError(f"invalid configuration{where}: {e}") from e
