"""Pipeline configuration using Pydantic Settings."""
from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from psmscope.errors import ConfigError


class TraceFormat(str, Enum):
    PCAP = "pcap"
    JSONL = "jsonl"


class MfiConfig(BaseModel):
    """Minimum support for frequent item mining."""

    model_config = ConfigDict(frozen=True)

    ms: float = Field(0.35, gt=0.0, lt=1.0)
    max_message_len: int = Field(2048, ge=8)


class AcdaConfig(BaseModel):
    """Search ranges and step bounds for auto-converging DBSCAN."""

    model_config = ConfigDict(frozen=True)

    eps_min: float = 0.1
    eps_max: float = 2.0
    minpts_min: int = 5
    minpts_max: int = 50
    eps_step: float = 0.1
    minpts_step: int = 5
    tol: float = Field(0.01, gt=0.0)
    alpha: float = 0.5
    beta: float = 0.01
    gamma: int = 10
    lam: int = 1
    max_iters: int = Field(10, ge=1)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_bounds(self) -> AcdaConfig:
        if not 0 < self.eps_min < self.eps_max:
            raise ValueError("eps range must satisfy 0 < eps_min < eps_max")
        if not 1 <= self.minpts_min < self.minpts_max:
            raise ValueError("minpts range must satisfy 1 <= minpts_min < minpts_max")
        if not 0 < self.beta <= self.eps_step <= self.alpha:
            raise ValueError("eps step must satisfy 0 < beta <= eps_step <= alpha")
        if not 1 <= self.lam <= self.minpts_step <= self.gamma:
            raise ValueError("minpts step must satisfy 1 <= lam <= minpts_step <= gamma")
        return self


class AlignmentParams(BaseModel):
    """Needleman-Wunsch scoring."""

    model_config = ConfigDict(frozen=True)

    match: int = 2
    mismatch: int = -1
    gap: int = -1

    @model_validator(mode="after")
    def _check_scores(self) -> AlignmentParams:
        if self.match <= self.mismatch or self.match <= self.gap:
            raise ValueError("match score must exceed both mismatch and gap scores")
        return self


class PsmThresholds(BaseModel):
    """Noise thresholds on per-state (ps) and whole-set (pt) transition probability."""

    model_config = ConfigDict(frozen=True)

    t_ps: float = Field(0.05, ge=0.0, lt=1.0)
    t_pt: float = Field(0.05, ge=0.0, lt=1.0)


class Settings(BaseSettings):
    """Typed, validated pipeline settings loaded from env, config file and flags."""

    mfi: MfiConfig = MfiConfig()
    acda: AcdaConfig = AcdaConfig()
    alignment: AlignmentParams = AlignmentParams()
    thresholds: PsmThresholds = PsmThresholds()
    seed: int = 0

    trace: Path | None = None
    trace_format: TraceFormat = TraceFormat.JSONL
    known_models: Path | None = None
    truth: Path | None = None
    output_dir: Path = Path("out")

    model_config = SettingsConfigDict(
        env_prefix="PSMSCOPE_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    def parameters(self) -> dict[str, Any]:
        """Algorithm parameters only (no paths), as recorded in artifacts."""
        return self.model_dump(
            mode="json", include={"mfi", "acda", "alignment", "thresholds", "seed"}
        )


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if value is None:
            continue
        if isinstance(value, dict):
            base_value = merged.get(key)
            nested = _merge(base_value if isinstance(base_value, dict) else {}, value)
            if nested:
                merged[key] = nested
        else:
            merged[key] = value
    return merged


def load_settings(
    config_path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> Settings:
    """Build settings: flags (overrides) beat the JSON config file, which beats env and defaults."""
    values: dict[str, Any] = {}
    if config_path is not None:
        path = Path(config_path)
        try:
            values = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    values = _merge(values, overrides or {})
    try:
        return Settings(**values)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
