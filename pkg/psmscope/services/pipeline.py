"""Stage orchestration for the ``infer``, ``eval`` and ``sweep-ms`` commands."""
from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import structlog

from psmscope.config import Settings
from psmscope.errors import ConfigError, EvaluationError, TraceError
from psmscope.models import Message, PfcLabeling, Psm, Session, SessionsArtifact
from psmscope.services import artifacts, format_cluster, ingest, metrics, mfi, psm, session_cluster
from psmscope.services.synth import load_truth

logger = structlog.get_logger()


@dataclass
class PipelineResult:
    output_dir: Path
    pfc: PfcLabeling
    sessions: SessionsArtifact
    psms: dict[int, Psm]
    report: dict[str, Any] | None = None


def load_unknown_sessions(settings: Settings) -> tuple[list[Session], dict[str, int]]:
    """Trace -> known-traffic filter -> sessions. Also returns packets claimed per known model."""
    if settings.trace is None:
        raise ConfigError("no trace given")
    packets = ingest.load_trace(settings.trace, settings.trace_format)
    models = ingest.load_known_models(settings.known_models) if settings.known_models else []
    known = dict(sorted(ingest.label_known(packets, models).items()))
    if known:
        logger.info("known_traffic_labelled", known=known)
    sessions = ingest.slice_sessions(ingest.filter_known(packets, models))
    if not sessions:
        raise TraceError(f"trace {settings.trace} holds no unknown-protocol messages")
    return sessions, known


def _infer_machines(
    sessions: list[Session], clustering: SessionsArtifact, settings: Settings, out: Path
) -> dict[int, Psm]:
    directions = psm.label_directions(sessions, clustering.sessions)
    machines = {}
    for cluster in range(clustering.k):
        members = [
            seq for seq, label in zip(clustering.sessions, clustering.labels) if label == cluster
        ]
        machines[cluster] = psm.infer_psm(members, directions, settings.thresholds, cluster)
        artifacts.write_psm(out, cluster, machines[cluster])
    return machines


def run_pipeline(settings: Settings) -> PipelineResult:
    """Run every stage, dumping each stage's artifact as soon as it exists."""
    out = settings.output_dir
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_config(out, settings)

    sessions, known = load_unknown_sessions(settings)
    messages: list[Message] = ingest.all_messages(sessions)

    items = mfi.extract_mfi(messages, settings.mfi)
    artifacts.write_mfi(out, items)

    vectors = format_cluster.feature_vectors(messages, items)
    pfc = format_cluster.acda(vectors, settings.acda)
    artifacts.write_pfc(out, pfc)

    seqs = session_cluster.label_sessions(sessions, pfc)
    clustering = session_cluster.cluster_sessions(seqs, pfc.g, settings.alignment, settings.seed)
    artifact = SessionsArtifact(**clustering.model_dump(), sessions=seqs, known=known)
    artifacts.write_sessions(out, artifact)

    machines = _infer_machines(sessions, artifact, settings, out)
    result = PipelineResult(output_dir=out, pfc=pfc, sessions=artifact, psms=machines)

    if settings.truth is not None:
        truth = load_truth(settings.truth)
        result.report = metrics.evaluate(
            pfc.labels, seqs, artifact.labels, machines, truth, settings.parameters()
        )
        artifacts.write_report(out, result.report)

    logger.info(
        "pipeline_finished",
        output_dir=str(out),
        messages=len(messages),
        formats=pfc.g,
        protocols=artifact.k,
    )
    return result


def evaluate_artifacts(artifact_dir: str | Path, truth_path: str | Path) -> dict[str, Any]:
    """Rebuild ``report.json`` from a finished run's artifacts and a truth file."""
    root = Path(artifact_dir)
    if not root.is_dir():
        raise EvaluationError(f"artifact directory not found: {root}")
    settings = artifacts.load_config(root / artifacts.CONFIG_FILE)
    pfc = artifacts.load_model(root / artifacts.PFC_FILE, PfcLabeling)
    clustering = artifacts.load_model(root / artifacts.SESSIONS_FILE, SessionsArtifact)
    machines = {
        cluster: artifacts.load_model(root / artifacts.psm_file(cluster), Psm)
        for cluster in range(clustering.k)
    }
    truth = load_truth(truth_path)
    report = metrics.evaluate(
        pfc.labels, clustering.sessions, clustering.labels, machines, truth, settings.parameters()
    )
    artifacts.write_report(root, report)
    return report


def run_sweep(settings: Settings, ms_values: Iterable[float] = mfi.DEFAULT_SWEEP) -> list[mfi.SweepPoint]:
    if settings.truth is None:
        raise ConfigError("the ms sweep needs a truth file")
    sessions, _ = load_unknown_sessions(settings)
    message_truth, _ = metrics.truth_labels(sessions, load_truth(settings.truth))
    return mfi.sweep_ms(
        ingest.all_messages(sessions),
        message_truth,
        ms_values,
        settings.acda,
        settings.mfi.max_message_len,
    )
