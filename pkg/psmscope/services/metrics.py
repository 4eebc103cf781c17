"""Evaluation: Rand Index for clusterings, SMC/TMC for state machines."""
from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Mapping, Sequence
from typing import Any

import numpy as np
import structlog
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import rand_score

from psmscope.errors import EvaluationError
from psmscope.models import NOISE, GroundTruth, Psm, PsmState, Role, Session, SessionSequence

logger = structlog.get_logger()

MATCHING = "role+dice hungarian, max cardinality"
_DICE_SCALE = 1_000_000


def rand_index(pred: Sequence[Hashable], truth: Sequence[Hashable]) -> float:
    if len(pred) != len(truth):
        raise EvaluationError(f"labeling length mismatch: {len(pred)} predicted vs {len(truth)} truth")
    if len(pred) < 2:
        raise EvaluationError("rand index needs at least 2 items")
    return float(rand_score(list(truth), list(pred)))


def format_label_map(pred: Sequence[int], truth: Sequence[str]) -> dict[int, str]:
    """Map each predicted cluster to its most common truth label (ties: smallest label)."""
    if len(pred) != len(truth):
        raise EvaluationError(f"labeling length mismatch: {len(pred)} predicted vs {len(truth)} truth")
    votes: dict[int, Counter[str]] = {}
    for cluster, label in zip(pred, truth):
        if cluster != NOISE:
            votes.setdefault(int(cluster), Counter())[label] += 1
    return {
        cluster: min(tally.items(), key=lambda item: (-item[1], item[0]))[0]
        for cluster, tally in sorted(votes.items())
    }


def _mapped(label: str | None, label_map: Mapping[int, str] | None) -> str | None:
    if label is None or label_map is None:
        return label
    try:
        return label_map[int(label)]
    except (KeyError, ValueError):
        return f"\x00unmapped:{label}"


def _incident(psm: Psm, state: PsmState, label_map: Mapping[int, str] | None) -> Counter[str]:
    labels: Counter[str] = Counter()
    for edge in psm.transitions:
        if edge.label is None:
            continue
        if edge.source == state.id:
            labels[_mapped(edge.label, label_map)] += 1
        if edge.target == state.id:
            labels[_mapped(edge.label, label_map)] += 1
    return labels


def dice(a: Counter[str], b: Counter[str]) -> float:
    total = sum(a.values()) + sum(b.values())
    if total == 0:
        return 0.0
    return 2 * sum((a & b).values()) / total


def _best_value(weights: np.ndarray, forced: list[tuple[int, int]]) -> int:
    rows = [r for r in range(weights.shape[0]) if r not in {f[0] for f in forced}]
    cols = [c for c in range(weights.shape[1]) if c not in {f[1] for f in forced}]
    value = sum(int(weights[r, c]) for r, c in forced)
    if rows and cols:
        sub = weights[np.ix_(rows, cols)]
        r, c = linear_sum_assignment(sub, maximize=True)
        value += int(sub[r, c].sum())
    return value


def match_states(
    inferred: Psm, reference: Psm, label_map: Mapping[int, str] | None = None
) -> dict[str, str]:
    """One-to-one state matching: most admissible pairs, then highest Dice total.

    A pair is admissible when roles agree and incident format labels overlap. Among
    optimal matchings, pairs are fixed in order of their sorted id pair, so the
    lower id wins a tie.
    """
    rows, cols = inferred.inner_states, reference.inner_states
    matching: dict[str, str] = {}
    for role in (Role.START, Role.END):
        a, b = inferred.state(role), reference.state(role)
        if a is not None and b is not None:
            matching[a.id] = b.id
    if not rows or not cols:
        return matching

    big = 2 * _DICE_SCALE * (min(len(rows), len(cols)) + 1)
    weights = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for i, x in enumerate(rows):
        x_labels = _incident(inferred, x, label_map)
        for j, y in enumerate(cols):
            if x.role != y.role:
                continue
            score = dice(x_labels, _incident(reference, y, None))
            if score > 0:
                weights[i, j] = big + round(score * _DICE_SCALE)

    optimum = _best_value(weights, [])
    order = sorted(
        ((i, j) for i in range(len(rows)) for j in range(len(cols)) if weights[i, j] > 0),
        key=lambda ij: (
            tuple(sorted((rows[ij[0]].id, cols[ij[1]].id))),
            rows[ij[0]].id,
            cols[ij[1]].id,
        ),
    )
    fixed: list[tuple[int, int]] = []
    for i, j in order:
        if any(i == r or j == c for r, c in fixed):
            continue
        if _best_value(weights, [*fixed, (i, j)]) == optimum:
            fixed.append((i, j))
    for i, j in fixed:
        matching[rows[i].id] = cols[j].id
    return matching


def _inner_pairs(inferred: Psm, matching: Mapping[str, str]) -> int:
    inner = {s.id for s in inferred.inner_states}
    return sum(1 for a in matching if a in inner)


def smc(
    inferred: Psm,
    reference: Psm,
    label_map: Mapping[int, str] | None = None,
    matching: Mapping[str, str] | None = None,
) -> float:
    n = len(inferred.inner_states) + len(reference.inner_states)
    if n == 0:
        return 1.0
    if matching is None:
        matching = match_states(inferred, reference, label_map)
    return 2 * _inner_pairs(inferred, matching) / n


def tmc(
    inferred: Psm,
    reference: Psm,
    label_map: Mapping[int, str] | None = None,
    matching: Mapping[str, str] | None = None,
) -> float:
    ours, theirs = inferred.inner_transitions, reference.inner_transitions
    n = len(ours) + len(theirs)
    if n == 0:
        return 1.0
    if matching is None:
        matching = match_states(inferred, reference, label_map)
    mapped = Counter(
        (matching[t.source], matching[t.target], _mapped(t.label, label_map))
        for t in ours
        if t.source in matching and t.target in matching
    )
    expected = Counter((t.source, t.target, t.label) for t in theirs)
    return 2 * sum((mapped & expected).values()) / n


def _key_and_size(session: Session | SessionSequence) -> tuple[str, int]:
    if isinstance(session, SessionSequence):
        return session.session_key, len(session.tokens)
    return session.key, len(session.messages)


def truth_labels(
    sessions: Sequence[Session | SessionSequence], truth: GroundTruth
) -> tuple[list[str], list[str]]:
    """Per-message format labels and per-session protocols aligned with the inferred sessions."""
    by_key = {s.key: s for s in truth.sessions}
    messages: list[str] = []
    protocols: list[str] = []
    shapes = [_key_and_size(s) for s in sessions]
    missing = [key for key, _ in shapes if key not in by_key]
    if missing:
        raise EvaluationError(f"{len(missing)} sessions have no truth entry, first: {missing[0]}")
    if len(sessions) != len(truth.sessions):
        raise EvaluationError(
            f"session count mismatch: {len(sessions)} inferred vs {len(truth.sessions)} truth"
        )
    for key, size in shapes:
        entry = by_key[key]
        if len(entry.formats) != size:
            raise EvaluationError(
                f"session {key}: {size} messages vs {len(entry.formats)} truth labels"
            )
        messages.extend(entry.formats)
        protocols.append(entry.protocol)
    return messages, protocols


def evaluate(
    pfc_labels: Sequence[int],
    sessions: Sequence[SessionSequence],
    session_labels: Sequence[int],
    psms: Mapping[int, Psm],
    truth: GroundTruth,
    parameters: dict[str, Any],
) -> dict[str, Any]:
    """Build the evaluation report for one inference run."""
    message_truth, session_truth = truth_labels(sessions, truth)
    format_ri = rand_index(list(pfc_labels), message_truth)
    session_ri = rand_index(list(session_labels), session_truth)
    label_map = format_label_map(pfc_labels, message_truth)

    per_protocol = []
    for cluster in sorted(psms):
        members = [p for p, label in zip(session_truth, session_labels) if label == cluster]
        protocol = min(Counter(members).items(), key=lambda item: (-item[1], item[0]))[0]
        reference = truth.protocols.get(protocol)
        if reference is None:
            raise EvaluationError(f"truth has no reference machine for protocol {protocol!r}")
        matching = match_states(psms[cluster], reference, label_map)
        entry = {
            "cluster": cluster,
            "protocol": protocol,
            "sessions": len(members),
            "smc": smc(psms[cluster], reference, label_map, matching),
            "tmc": tmc(psms[cluster], reference, label_map, matching),
        }
        per_protocol.append(entry)
        logger.info("protocol_scored", **entry)

    logger.info("run_evaluated", format_ri=round(format_ri, 4), session_ri=round(session_ri, 4))
    return {
        "format_ri": format_ri,
        "session_ri": session_ri,
        "per_protocol": per_protocol,
        "parameters": parameters,
        "matching": MATCHING,
        "label_map": {str(k): v for k, v in label_map.items()},
    }
