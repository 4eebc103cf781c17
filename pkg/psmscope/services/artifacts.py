"""Stage artifacts: deterministic JSON dumps and their loaders."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, TypeVar

import structlog
from pydantic import BaseModel, TypeAdapter, ValidationError

from psmscope.config import Settings
from psmscope.errors import EvaluationError, PsmScopeError
from psmscope.models import FrequentItem, PfcLabeling, Psm, SessionsArtifact
from psmscope.services.dot import write_dot

logger = structlog.get_logger()

MFI_FILE = "mfi.json"
PFC_FILE = "pfc.json"
SESSIONS_FILE = "sessions.json"
CONFIG_FILE = "config.json"
REPORT_FILE = "report.json"

_mfi_items = TypeAdapter(list[FrequentItem])

ModelT = TypeVar("ModelT", bound=BaseModel)


def psm_file(cluster: int) -> str:
    return f"psm_{cluster}.json"


def _write(path: Path, text: str) -> Path:
    path.write_text(text.rstrip("\n") + "\n", encoding="utf-8")
    logger.debug("artifact_written", path=str(path))
    return path


def dump_json(path: str | Path, data: Any) -> Path:
    return _write(Path(path), json.dumps(data, indent=2))


def dump_model(path: str | Path, model: BaseModel) -> Path:
    return _write(Path(path), model.model_dump_json(by_alias=True, indent=2))


def _read(path: Path, error: type[PsmScopeError]) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise error(f"cannot read artifact {path}: {exc.strerror or exc}") from exc


def load_model(
    path: str | Path, model: type[ModelT], error: type[PsmScopeError] = EvaluationError
) -> ModelT:
    path = Path(path)
    try:
        return model.model_validate_json(_read(path, error))
    except ValidationError as exc:
        raise error(f"invalid artifact {path}: {exc}") from exc


def write_mfi(out_dir: Path, items: list[FrequentItem]) -> Path:
    return _write(out_dir / MFI_FILE, _mfi_items.dump_json(items, indent=2).decode())


def load_mfi(path: str | Path) -> list[FrequentItem]:
    path = Path(path)
    try:
        return _mfi_items.validate_json(_read(path, EvaluationError))
    except ValidationError as exc:
        raise EvaluationError(f"invalid artifact {path}: {exc}") from exc


def write_pfc(out_dir: Path, pfc: PfcLabeling) -> Path:
    return dump_model(out_dir / PFC_FILE, pfc)


def write_sessions(out_dir: Path, sessions: SessionsArtifact) -> Path:
    return dump_model(out_dir / SESSIONS_FILE, sessions)


def write_psm(out_dir: Path, cluster: int, psm: Psm) -> tuple[Path, Path]:
    json_path = dump_model(out_dir / psm_file(cluster), psm)
    dot_path = write_dot(psm, json_path.with_suffix(".dot"), name=f"psm_{cluster}")
    return json_path, dot_path


def write_config(out_dir: Path, settings: Settings) -> Path:
    return dump_json(out_dir / CONFIG_FILE, settings.model_dump(mode="json", exclude={"output_dir"}))


def load_config(path: str | Path) -> Settings:
    path = Path(path)
    try:
        data = json.loads(_read(path, EvaluationError))
        return Settings(**data)
    except (json.JSONDecodeError, TypeError, ValidationError) as exc:
        raise EvaluationError(f"invalid settings snapshot {path}: {exc}") from exc


def write_report(out_dir: Path, report: dict[str, Any]) -> Path:
    return dump_json(out_dir / REPORT_FILE, report)
