from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

load_dotenv()


def env(name: str, required: bool = False, default: str | None = None) -> str:
    val = os.getenv(name)
    if val is None or val == "":
        if required:
            raise RuntimeError(f"Missing required env var: {name}")
        return default if default is not None else ""
    return val


@dataclass(frozen=True)
class Settings:
    # ---- Logging ----
    LOG_LEVEL: str = env("LOG_LEVEL", default="INFO")
    LOG_FORMAT: str = env("LOG_FORMAT", default="human")  # "human" or "json"
    LOG_FILE: str = env("LOG_FILE", default="")

    # ---- Execution ----
    SATSIM_JOBS: int = int(env("SATSIM_JOBS", default="1"))
    SATSIM_PROGRESS: bool = env("SATSIM_PROGRESS", default="true").lower() in ("1", "true", "yes", "y")


settings = Settings()


# Keys that name input files. Relative values resolve against the config file's directory.
INPUT_KEYS = (
    "terrestrial_baseline",
    "satellite_baseline",
    "tle",
    "stations",
    "pops",
    "relays",
    "circuits",
    "measured",
)

REQUIRED_INPUT_KEYS = INPUT_KEYS[:-1]


def _split_list(value):
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class ExperimentConfig(BaseModel):
    """
    One reproducible experiment.

    Loaded from a flat ``key=value`` file (see docs/experiment-config.md).
    Every key has a default except ``seed`` and the input paths.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # ---- Inputs ----
    terrestrial_baseline: Path
    satellite_baseline: Path
    tle: Path
    stations: Path
    pops: Path
    relays: Path
    circuits: Path
    measured: Optional[Path] = None

    # ---- Reproducibility / execution ----
    seed: int = Field(ge=0, lt=2**64)
    out_dir: Path = Path("out")
    jobs: int = Field(default=1, ge=1)

    # ---- Timeline ----
    timeline_start: Optional[float] = None  # None: latest TLE epoch
    timeline_step_s: int = Field(default=300, gt=0)
    timeline_duration_s: int = Field(default=86400, gt=0)

    # ---- Speed model ----
    bucket_km: float = Field(default=1000.0, gt=0)
    n_delimiters: int = Field(default=1000, ge=2)

    # ---- Routing graph ----
    strategy: str = "isl_enabled"
    k: int = Field(default=10, ge=1)
    k_values: List[int] = Field(default_factory=list)
    elevation_deg: float = Field(default=25.0, ge=0, lt=90)
    gpl_latency_ms: float = Field(default=5.0, gt=0)
    isl_processing_ms: float = Field(default=0.0, ge=0)
    isl_topology: str = "grid"
    isl_nearest_k: int = Field(default=4, ge=1)

    # ---- Scheduler ----
    scheduler_interval_s: float = Field(default=300.0, gt=0)
    scheduler_budget: int = Field(default=50, ge=0)
    scheduler_mix: float = Field(default=0.5, ge=0, le=1)
    scheduler_slack_percent: float = Field(default=0.0, ge=0)

    # ---- Deployment / adversary ----
    deployment_scenarios: List[str] = Field(default_factory=lambda: ["top", "weighted", "random"])
    deployment_n_values: List[int] = Field(default_factory=lambda: [50, 100])
    exclude_hosting: List[str] = Field(default_factory=list)
    adversary_n_values: List[int] = Field(default_factory=list)

    # ---- Analysis ----
    report_percentiles: List[int] = Field(default_factory=lambda: [25, 50, 75, 90, 95, 99])
    reduction_bins: List[float] = Field(default_factory=lambda: [20.0, 40.0, 60.0, 80.0])
    min_samples: int = Field(default=20, ge=1)
    tail_quantile: int = Field(default=95, ge=1, le=99)
    min_joint_samples: int = Field(default=100, ge=1)
    probe_bytes: int = Field(default=104, gt=0)

    # ---- Calibration ----
    calibration_percentiles: List[int] = Field(default_factory=lambda: list(range(1, 100)))
    calibration_draws: int = Field(default=10000, ge=1)
    calibration_granularity: str = "circuit"

    @field_validator(
        "k_values",
        "deployment_scenarios",
        "deployment_n_values",
        "exclude_hosting",
        "adversary_n_values",
        "report_percentiles",
        "reduction_bins",
        "calibration_percentiles",
        mode="before",
    )
    @classmethod
    def _parse_lists(cls, value):
        return _split_list(value)

    @field_validator("timeline_start", "measured", mode="before")
    @classmethod
    def _auto_is_none(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", "auto", "none"):
            return None
        return value

    @field_validator("strategy")
    @classmethod
    def _check_strategy(cls, value: str) -> str:
        from .graph import RoutingStrategy

        RoutingStrategy.from_name(value)
        return value

    @field_validator("isl_topology")
    @classmethod
    def _check_topology(cls, value: str) -> str:
        if value not in ("grid", "nearest"):
            raise ValueError("isl_topology must be 'grid' or 'nearest'")
        return value

    @field_validator("calibration_granularity")
    @classmethod
    def _check_granularity(cls, value: str) -> str:
        if value not in ("circuit", "pair"):
            raise ValueError("calibration_granularity must be 'circuit' or 'pair'")
        return value

    @field_validator("deployment_scenarios")
    @classmethod
    def _check_scenarios(cls, value: List[str]) -> List[str]:
        from .sator import DeploymentScenario

        for name in value:
            DeploymentScenario.from_name(name)
        return value

    @model_validator(mode="after")
    def _check_inputs(self) -> "ExperimentConfig":
        if self.timeline_duration_s % self.timeline_step_s:
            raise ValueError("timeline_duration_s must be a multiple of timeline_step_s")
        for key in INPUT_KEYS:
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ValueError(f"{key}: file not found: {path}")
        return self

    @property
    def analysis_k_values(self) -> List[int]:
        return sorted(set(self.k_values) | {self.k})

    def config_hash(self) -> str:
        """
        Hash of everything that can change results.

        ``out_dir`` and ``jobs`` are excluded; input files contribute their
        content digest rather than their path.
        """
        data = self.model_dump(mode="json", exclude={"out_dir", "jobs", *INPUT_KEYS})
        for key in INPUT_KEYS:
            path = getattr(self, key)
            data[key] = _file_digest(path) if path is not None else None
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_experiment_config(path: str | Path, overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    """
    Load and validate an experiment config file.

    Args:
        path: Flat key=value file
        overrides: Values taken from CLI flags (None entries are ignored)

    Raises:
        ConfigError: file missing, unknown key, bad value, missing input file
    """
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")

    raw = {key.strip().lower(): value for key, value in dotenv_values(config_path).items()}
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    base = config_path.parent
    for key in (*INPUT_KEYS, "out_dir"):
        value = raw.get(key)
        if isinstance(value, str) and value.strip() and value.strip().lower() not in ("auto", "none"):
            candidate = Path(value.strip())
            raw[key] = str(candidate if candidate.is_absolute() else (base / candidate).resolve())

    if raw.get("seed") in (None, ""):
        raise ConfigError(f"{config_path}: 'seed' is mandatory (set it in the file or pass --seed)")

    try:
        return ExperimentConfig(**raw)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{config_path}: {problems}") from e
