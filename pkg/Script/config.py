"""Configuration loading for the particle lab."""

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


def _env(name: str) -> str | None:
    """Get an environment variable or return None if unset/blank."""
    v = os.environ.get(name)
    if v is None or v.strip() == "":
        return None
    return v


def _float_env(name: str, default: float) -> float:
    """Parse a float environment variable, falling back to default."""
    v = _env(name)
    if v is None:
        return default
    try:
        return float(v)
    except ValueError as e:
        raise ConfigError(f"Invalid {name}: expected a number") from e


def _int_env(name: str, default: int) -> int:
    """Parse an integer environment variable, falling back to default."""
    v = _env(name)
    if v is None:
        return default
    try:
        return int(v)
    except ValueError as e:
        raise ConfigError(f"Invalid {name}: expected an integer") from e


def _choice_env(name: str, default: str, choices: tuple[str, ...]) -> str:
    """Parse an enumerated environment variable, falling back to default."""
    v = _env(name)
    if v is None:
        return default
    v = v.strip().lower()
    if v not in choices:
        raise ConfigError(f"Invalid {name}: expected one of {', '.join(choices)}")
    return v


@dataclass(frozen=True)
class LabConfig:
    """Process-level settings shared by every experiment run."""

    seed: int = 20240601
    workers: int = 1
    log_level: str = "INFO"
    output_format: str = "csv"

    # Root for relative output paths; empty means <project>/Data
    data_root: str = ""

    # Padding factor c_pad in L_sim >= 2(K_max + c_pad * sqrt(t_max))
    pad_factor: float = 6.0

    # Default number of scales on martingale grids
    s_points: int = 32

    # Outer draws between INFO progress lines
    progress_every: int = 500

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("Invalid PARTICLE_LAB_WORKERS: expected a positive integer")
        if self.seed < 0:
            raise ConfigError("Invalid PARTICLE_LAB_SEED: expected a non-negative integer")
        if self.output_format not in ("csv", "json"):
            raise ConfigError("Invalid PARTICLE_LAB_FORMAT: expected csv or json")
        if self.pad_factor <= 0:
            raise ConfigError("Invalid PARTICLE_LAB_PAD_FACTOR: expected a positive number")
        if self.s_points < 2:
            raise ConfigError("Invalid PARTICLE_LAB_S_POINTS: expected at least 2")

    @property
    def project_root(self) -> Path:
        """Project root directory (folder containing Data/ and Script/)."""
        return Path(__file__).resolve().parents[1]

    @property
    def data_dir(self) -> Path:
        """Default directory for experiment outputs."""
        if self.data_root:
            return Path(self.data_root)
        return self.project_root / "Data"

    @property
    def specs_dir(self) -> Path:
        """Directory holding the shipped example experiment specs."""
        return self.project_root / "Data" / "specs"

    @classmethod
    def from_env(cls) -> "LabConfig":
        """Create a config instance from environment variables."""
        return cls(
            seed=_int_env("PARTICLE_LAB_SEED", 20240601),
            workers=_int_env("PARTICLE_LAB_WORKERS", 1),
            log_level=_env("PARTICLE_LAB_LOG_LEVEL") or "INFO",
            output_format=_choice_env("PARTICLE_LAB_FORMAT", "csv", ("csv", "json")),
            data_root=_env("PARTICLE_LAB_DATA_DIR") or "",
            pad_factor=_float_env("PARTICLE_LAB_PAD_FACTOR", 6.0),
            s_points=_int_env("PARTICLE_LAB_S_POINTS", 32),
            progress_every=_int_env("PARTICLE_LAB_PROGRESS_EVERY", 500),
        )
