"""Exception hierarchy; every error knows the pipeline stage it belongs to."""
from __future__ import annotations


class PsmScopeError(Exception):
    """Base error. ``stage`` names the failing pipeline stage, ``exit_code`` the CLI status."""

    stage = "pipeline"
    exit_code = 1

    def __str__(self) -> str:
        return f"[{self.stage}] {super().__str__()}"


class ConfigError(PsmScopeError, ValueError):
    stage = "config"
    exit_code = 2


class TraceError(PsmScopeError, ValueError):
    stage = "ingest"
    exit_code = 10


class ModelFileError(PsmScopeError, ValueError):
    stage = "ingest"
    exit_code = 11


class EmptyMfiError(PsmScopeError, ValueError):
    stage = "mfi"
    exit_code = 20


class ClusteringError(PsmScopeError, ValueError):
    stage = "format_cluster"
    exit_code = 30


class SessionClusterError(PsmScopeError, ValueError):
    stage = "session_cluster"
    exit_code = 40


class PsmError(PsmScopeError, ValueError):
    stage = "psm_infer"
    exit_code = 50


class EvaluationError(PsmScopeError, ValueError):
    stage = "metrics"
    exit_code = 60


class SpecError(PsmScopeError, ValueError):
    stage = "synth"
    exit_code = 70
