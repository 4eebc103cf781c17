"""Protocol format transition sets, Ps/Pt noise filtering and PSM construction."""
from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import structlog

from psmscope.config import PsmThresholds
from psmscope.errors import PsmError
from psmscope.models import (
    END,
    NOISE,
    START,
    Direction,
    Psm,
    PsmState,
    PsmTransition,
    Role,
    Session,
    SessionSequence,
)

logger = structlog.get_logger()

Edge = tuple[int, int]


def token_name(token: int) -> str:
    if token == START:
        return "start"
    if token == END:
        return "end"
    return str(token)


@dataclass(frozen=True)
class Pfts:
    """Counted format-to-format transitions of one protocol, with virtual START and END labels."""

    counts: Counter[Edge] = field(default_factory=Counter)

    @property
    def totals(self) -> Counter[int]:
        totals: Counter[int] = Counter()
        for (source, _), count in self.counts.items():
            totals[source] += count
        return totals

    @property
    def n_set(self) -> int:
        return sum(self.counts.values())

    @property
    def edges(self) -> list[Edge]:
        return sorted(edge for edge, count in self.counts.items() if count > 0)

    @property
    def labels(self) -> list[int]:
        return sorted({t for edge in self.edges for t in edge if t not in (START, END)})


def build_pfts(seqs: Iterable[SessionSequence | Sequence[int]]) -> Pfts:
    counts: Counter[Edge] = Counter()
    for seq in seqs:
        tokens = seq.tokens if isinstance(seq, SessionSequence) else seq
        chain = [t for t in tokens if t != NOISE]
        if not chain:
            continue
        path = [START, *chain, END]
        counts.update(zip(path, path[1:]))
    return Pfts(counts)


def ps(pfts: Pfts, source: int, target: int) -> float:
    total = pfts.totals[source]
    if total == 0:
        raise PsmError(f"label {token_name(source)} has no outgoing transitions")
    return pfts.counts[(source, target)] / total


def pt(pfts: Pfts, source: int, target: int) -> float:
    n_set = pfts.n_set
    if n_set == 0:
        raise PsmError("transition set is empty")
    return pfts.counts[(source, target)] / n_set


def filter_noise(pfts: Pfts, th: PsmThresholds, reference: Pfts | None = None) -> Pfts:
    """Drop edges with ps < t_ps or pt < t_pt, both taken on ``reference`` (default: ``pfts``).

    START edges come back only when none survive, and only into labels that kept some edge.
    A label left without an exit gets its END edge back when it has one.
    """
    if reference is None:
        reference = pfts
    kept = {
        edge
        for edge in pfts.edges
        if ps(reference, *edge) >= th.t_ps and pt(reference, *edge) >= th.t_pt
    }

    def alive() -> set[int]:
        return {t for edge in kept for t in edge}

    if not any(source == START for source, _ in kept):
        live = alive()
        kept |= {(s, t) for s, t in pfts.edges if s == START and t in live}
    live, sources = alive(), {s for s, _ in kept}
    for label in live - {START, END} - sources:
        if (label, END) in pfts.counts:
            kept.add((label, END))

    return Pfts(Counter({edge: pfts.counts[edge] for edge in kept}))


def removed_edges(original: Pfts, filtered: Pfts) -> list[dict[str, Any]]:
    return [
        {
            "from": token_name(s),
            "to": token_name(t),
            "count": original.counts[(s, t)],
            "ps": ps(original, s, t),
            "pt": pt(original, s, t),
        }
        for s, t in original.edges
        if (s, t) not in filtered.counts
    ]


def label_directions(
    sessions: Sequence[Session], seqs: Sequence[SessionSequence]
) -> dict[int, Direction]:
    """Majority message direction per format label; ties go to the initiator."""
    votes: dict[int, Counter[Direction]] = {}
    for session, seq in zip(sessions, seqs, strict=True):
        for message, token in zip(session.messages, seq.tokens, strict=True):
            if token != NOISE:
                votes.setdefault(token, Counter())[message.direction] += 1
    return {
        label: Direction.INITIATOR
        if tally[Direction.INITIATOR] >= tally[Direction.RESPONDER]
        else Direction.RESPONDER
        for label, tally in votes.items()
    }


def state_id(label: int, direction: Direction) -> str:
    role = Role.CLIENT if direction == Direction.INITIATOR else Role.SERVER
    return f"{role.value}-{label}"


def pfts_to_psm(
    pfts: Pfts, direction_of: Mapping[int, Direction], meta: dict[str, Any] | None = None
) -> Psm:
    """One state per (role, format); every edge y carries format y and its ps on the given counts."""
    ids = {START: "start", END: "end"}
    states = [PsmState(id="start", role=Role.START), PsmState(id="end", role=Role.END)]
    for label in pfts.labels:
        if label not in direction_of:
            raise PsmError(f"format {label} has no direction evidence")
        ids[label] = state_id(label, direction_of[label])
        role = Role.CLIENT if direction_of[label] == Direction.INITIATOR else Role.SERVER
        states.append(PsmState(id=ids[label], role=role))

    transitions = [
        PsmTransition(
            source=ids[s],
            target=ids[t],
            label=None if t == END else str(t),
            p=ps(pfts, s, t),
        )
        for s, t in pfts.edges
    ]
    return Psm(states=states, transitions=transitions, meta=meta or {})


def infer_psm(
    seqs: Sequence[SessionSequence],
    direction_of: Mapping[int, Direction],
    th: PsmThresholds,
    protocol: int | str,
) -> Psm:
    original = build_pfts(seqs)
    filtered = filter_noise(original, th)
    removed = removed_edges(original, filtered)
    psm = pfts_to_psm(
        filtered,
        direction_of,
        meta={
            "protocol": protocol,
            "sessions": len(seqs),
            "probability": "ps_on_filtered_counts",
            "t_ps": th.t_ps,
            "t_pt": th.t_pt,
            "removed": removed,
        },
    )
    logger.info(
        "psm_inferred",
        protocol=protocol,
        sessions=len(seqs),
        states=len(psm.inner_states),
        transitions=len(psm.transitions),
        removed=len(removed),
    )
    return psm
