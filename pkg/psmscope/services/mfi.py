"""Maximum frequent itemset mining over contiguous byte patterns of length 1, 2, 4 and 8."""
from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict

from psmscope.config import AcdaConfig, MfiConfig
from psmscope.errors import ClusteringError, EmptyMfiError
from psmscope.models import FrequentItem, Message
from psmscope.services import format_cluster, metrics

logger = structlog.get_logger()

ITEM_LENGTHS = (1, 2, 4, 8)
DEFAULT_SWEEP = tuple(float(ms) for ms in np.round(np.arange(0.20, 0.4501, 0.05), 2))


def _payloads(messages: Iterable[Message | bytes]) -> list[bytes]:
    return [m.payload if isinstance(m, Message) else bytes(m) for m in messages]


def support(item: bytes, messages: Sequence[Message | bytes]) -> float:
    """Fraction of messages containing ``item`` at least once."""
    payloads = _payloads(messages)
    if not payloads:
        raise EmptyMfiError("support is undefined on an empty message set")
    return sum(1 for p in payloads if item in p) / len(payloads)


def _windows(payload: bytes, length: int, halves: set[bytes]) -> set[bytes]:
    half = length // 2
    found = set()
    for start in range(len(payload) - length + 1):
        window = payload[start : start + length]
        if window[:half] in halves and window[half:] in halves:
            found.add(window)
    return found


def frequent_items(payloads: list[bytes], ms: float) -> dict[bytes, int]:
    """All frequent patterns of every ladder length, with per-message counts."""
    n = len(payloads)
    level: Counter[bytes] = Counter()
    for payload in payloads:
        level.update({bytes([b]) for b in set(payload)})
    frequent = {item: count for item, count in level.items() if count / n >= ms}
    result = dict(frequent)

    for length in ITEM_LENGTHS[1:]:
        if not frequent:
            break
        halves = set(frequent)
        level = Counter()
        for payload in payloads:
            level.update(_windows(payload, length, halves))
        frequent = {item: count for item, count in level.items() if count / n >= ms}
        result.update(frequent)
    return result


def _contained(item: bytes, longer: Iterable[bytes]) -> bool:
    return any(item in other for other in longer)


def extract_mfi(messages: Sequence[Message | bytes], cfg: MfiConfig) -> list[FrequentItem]:
    payloads = [p[: cfg.max_message_len] for p in _payloads(messages)]
    if not payloads:
        raise EmptyMfiError("no messages to mine")
    counts = frequent_items(payloads, cfg.ms)
    by_length: dict[int, list[bytes]] = {length: [] for length in ITEM_LENGTHS}
    for item in counts:
        by_length[len(item)].append(item)

    kept = []
    for item, count in counts.items():
        longer = [other for length in ITEM_LENGTHS if length > len(item) for other in by_length[length]]
        if not _contained(item, longer):
            kept.append((item, count))
    if not kept:
        raise EmptyMfiError(f"no pattern reaches minimum support {cfg.ms}")

    kept.sort(key=lambda entry: (-len(entry[0]), -entry[1], entry[0]))
    n = len(payloads)
    items = [FrequentItem.of(item, count / n) for item, count in kept]
    logger.info(
        "mfi_extracted",
        items=len(items),
        ms=cfg.ms,
        lengths=dict(sorted(Counter(len(i.pattern) for i in items).items())),
    )
    return items


class SweepPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    ms: float
    ri: float | None
    clusters: int | None


def sweep_ms(
    messages: Sequence[Message | bytes],
    truth_labels: Sequence[str],
    ms_values: Iterable[float] = DEFAULT_SWEEP,
    acda_cfg: AcdaConfig | None = None,
    max_message_len: int = 2048,
) -> list[SweepPoint]:
    """Score each minimum support by the format clustering Rand Index it leads to."""
    acda_cfg = acda_cfg or AcdaConfig()
    points = []
    for ms in ms_values:
        try:
            mfi = extract_mfi(messages, MfiConfig(ms=ms, max_message_len=max_message_len))
            labeling = format_cluster.acda(format_cluster.feature_vectors(messages, mfi), acda_cfg)
        except (EmptyMfiError, ClusteringError) as exc:
            logger.warning("ms_candidate_failed", ms=ms, error=str(exc))
            points.append(SweepPoint(ms=ms, ri=None, clusters=None))
            continue
        ri = metrics.rand_index(labeling.labels, list(truth_labels))
        points.append(SweepPoint(ms=ms, ri=ri, clusters=labeling.g))
        logger.info("ms_candidate_scored", ms=ms, ri=round(ri, 4), clusters=labeling.g)
    return points
