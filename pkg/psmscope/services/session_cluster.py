"""Session sequences, Needleman-Wunsch similarity and K-Medoids protocol clustering."""
from __future__ import annotations

from collections.abc import Iterator, Sequence

import numpy as np
import structlog

from psmscope.config import AlignmentParams
from psmscope.errors import SessionClusterError
from psmscope.models import NOISE, PfcLabeling, Session, SessionClustering, SessionSequence
from psmscope.services.format_cluster import silhouette_from_distances

logger = structlog.get_logger()

MAX_ROUNDS = 100

Tokens = Sequence[int]


def _tokens(seq: SessionSequence | Tokens) -> list[int]:
    return list(seq.tokens) if isinstance(seq, SessionSequence) else list(seq)


def label_sessions(sessions: Sequence[Session], pfc: PfcLabeling) -> list[SessionSequence]:
    """Render sessions as PFC label sequences; labels follow session then message order."""
    total = sum(len(s.messages) for s in sessions)
    if total != len(pfc.labels):
        raise SessionClusterError(
            f"labeling covers {len(pfc.labels)} messages but sessions hold {total}"
        )
    seqs, offset = [], 0
    for session in sessions:
        size = len(session.messages)
        seqs.append(SessionSequence(session_key=session.key, tokens=pfc.labels[offset : offset + size]))
        offset += size
    return seqs


def nw_similarity(
    a: SessionSequence | Tokens, b: SessionSequence | Tokens, p: AlignmentParams = AlignmentParams()
) -> int:
    """Matched positions of the best global alignment.

    Among equal-score alignments the one with more matches wins. Noise never matches.
    """
    x, y = _tokens(a), _tokens(b)
    rows, cols = len(x), len(y)
    previous = [(j * p.gap, 0) for j in range(cols + 1)]
    for i in range(1, rows + 1):
        current = [(i * p.gap, 0)]
        for j in range(1, cols + 1):
            same = x[i - 1] == y[j - 1] and x[i - 1] != NOISE
            diag_score, diag_matches = previous[j - 1]
            diag = (diag_score + (p.match if same else p.mismatch), diag_matches + int(same))
            up = (previous[j][0] + p.gap, previous[j][1])
            left = (current[j - 1][0] + p.gap, current[j - 1][1])
            current.append(max(diag, up, left))
        previous = current
    return previous[cols][1]


def session_distance(
    a: SessionSequence | Tokens, b: SessionSequence | Tokens, p: AlignmentParams = AlignmentParams()
) -> float:
    x, y = _tokens(a), _tokens(b)
    if not x and not y:
        return 0.0
    return 1.0 - 2.0 * nw_similarity(x, y, p) / (len(x) + len(y))


def distance_matrix(seqs: Sequence[SessionSequence | Tokens], p: AlignmentParams) -> np.ndarray:
    tokens = [tuple(_tokens(s)) for s in seqs]
    n = len(tokens)
    distances = np.zeros((n, n), dtype=float)
    cache: dict[tuple[tuple[int, ...], tuple[int, ...]], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            key = (tokens[i], tokens[j]) if tokens[i] <= tokens[j] else (tokens[j], tokens[i])
            if key not in cache:
                cache[key] = session_distance(key[0], key[1], p)
            distances[i, j] = distances[j, i] = cache[key]
    return distances


def _initial_medoids(distances: np.ndarray, k: int) -> list[int]:
    medoids = [int(np.argmin(distances.sum(axis=1)))]
    while len(medoids) < k:
        nearest = distances[:, medoids].min(axis=1)
        nearest[medoids] = -1.0
        medoids.append(int(np.argmax(nearest)))
    return medoids


def _assign(distances: np.ndarray, medoids: list[int]) -> tuple[np.ndarray, float]:
    labels = np.argmin(distances[:, medoids], axis=1)
    for cluster, medoid in enumerate(medoids):
        labels[medoid] = cluster
    cost = float(sum(distances[i, medoids[c]] for i, c in enumerate(labels)))
    return labels, cost


def _update(distances: np.ndarray, medoids: list[int], labels: np.ndarray) -> list[int]:
    updated = []
    for cluster, medoid in enumerate(medoids):
        members = np.flatnonzero(labels == cluster)
        sums = distances[np.ix_(members, members)].sum(axis=1)
        current = sums[int(np.flatnonzero(members == medoid)[0])]
        best = int(np.argmin(sums))
        updated.append(medoid if current <= sums[best] else int(members[best]))
    return updated


def kmedoids_path(distances: np.ndarray, k: int) -> Iterator[tuple[list[int], np.ndarray, float]]:
    """Yield ``(medoids, labels, cost)`` after every assignment round."""
    distances = np.asarray(distances, dtype=float)
    n = len(distances)
    if not 1 <= k <= n:
        raise SessionClusterError(f"k={k} must lie in 1..{n}")
    medoids = _initial_medoids(distances, k)
    labels, cost = _assign(distances, medoids)
    yield medoids, labels, cost
    for _ in range(MAX_ROUNDS):
        updated = _update(distances, medoids, labels)
        if updated == medoids:
            return
        medoids = updated
        labels, cost = _assign(distances, medoids)
        yield medoids, labels, cost


def kmedoids(distances: np.ndarray, k: int, seed: int = 0) -> SessionClustering:
    """PAM-style K-Medoids with a deterministic greedy start.

    ``seed`` is accepted for randomized restarts; the greedy start does not consume it.
    """
    medoids, labels, _ = list(kmedoids_path(distances, k))[-1]
    return SessionClustering(
        labels=[int(x) for x in labels],
        k=k,
        medoids=medoids,
        sc=silhouette_from_distances(np.asarray(distances, dtype=float), labels),
    )


def cluster_sessions(
    seqs: Sequence[SessionSequence | Tokens],
    pfc_count: int,
    p: AlignmentParams = AlignmentParams(),
    seed: int = 0,
) -> SessionClustering:
    """Try k = 1..pfc_count and keep the clustering with the best silhouette (smaller k on ties)."""
    n = len(seqs)
    if n < 2:
        raise SessionClusterError(f"session clustering needs at least 2 sessions, got {n}")
    if pfc_count < 1:
        raise SessionClusterError("no format clusters to build sessions from")
    distances = distance_matrix(seqs, p)

    results: dict[int, SessionClustering] = {}
    scores: dict[int, float | None] = {}
    for k in range(1, min(pfc_count, n) + 1):
        results[k] = kmedoids(distances, k, seed)
        scores[k] = None if k in (1, n) else results[k].sc

    valid = [k for k, sc in scores.items() if sc is not None]
    if valid:
        chosen = max(valid, key=lambda k: (scores[k], -k))
    else:
        chosen = 1
        logger.warning("session_k_undefined", sessions=n, pfc_count=pfc_count)
    result = results[chosen].model_copy(update={"sc": scores[chosen], "k_scores": scores})
    logger.info(
        "sessions_clustered",
        sessions=n,
        k=chosen,
        sc=None if result.sc is None else round(result.sc, 4),
    )
    return result
