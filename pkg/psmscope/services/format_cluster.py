"""Fuzzy-membership feature vectors and auto-converging DBSCAN (ACDA) over them."""
from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from difflib import SequenceMatcher
from typing import NamedTuple

import numpy as np
import structlog
from scipy.spatial.distance import cdist
from sklearn.cluster import DBSCAN
from sklearn.metrics import silhouette_samples

from psmscope.config import AcdaConfig
from psmscope.errors import ClusteringError, EmptyMfiError
from psmscope.models import NOISE, AcdaIteration, FrequentItem, Message, PfcLabeling

logger = structlog.get_logger()


def lcss_len(a: bytes, b: bytes) -> int:
    """Length of the longest contiguous run shared by ``a`` and ``b``."""
    if not a or not b:
        return 0
    return SequenceMatcher(None, a, b, autojunk=False).find_longest_match(0, len(a), 0, len(b)).size


def membership(mf: FrequentItem | bytes, m: Message | bytes) -> float:
    pattern = mf.pattern if isinstance(mf, FrequentItem) else bytes(mf)
    payload = m.payload if isinstance(m, Message) else bytes(m)
    if not pattern:
        raise ValueError("pattern must be non-empty")
    if pattern in payload:
        return 1.0
    return lcss_len(pattern, payload) / len(pattern)


def feature_vectors(
    messages: Sequence[Message | bytes], mfi: Sequence[FrequentItem]
) -> np.ndarray:
    """One row per message, one column per MFI item."""
    if not mfi:
        raise EmptyMfiError("feature vectors need a non-empty MFI")
    patterns = [item.pattern for item in mfi]
    vectors = np.zeros((len(messages), len(patterns)), dtype=float)
    matcher = SequenceMatcher(None, autojunk=False)
    for row, message in enumerate(messages):
        payload = message.payload if isinstance(message, Message) else bytes(message)
        # b2j is built once per payload; only seq1 changes per pattern.
        matcher.set_seq2(payload)
        for col, pattern in enumerate(patterns):
            if pattern in payload:
                vectors[row, col] = 1.0
                continue
            matcher.set_seq1(pattern)
            size = matcher.find_longest_match(0, len(pattern), 0, len(payload)).size
            vectors[row, col] = size / len(pattern)
    return vectors


def euclid(v1: Sequence[float] | np.ndarray, v2: Sequence[float] | np.ndarray) -> float:
    a, b = np.asarray(v1, dtype=float), np.asarray(v2, dtype=float)
    if a.shape != b.shape:
        raise ClusteringError(f"vector length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def distance_matrix(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=float)
    return cdist(vectors, vectors, "euclidean")


def _dbscan_labels(distances: np.ndarray, eps: float, minpts: int) -> np.ndarray:
    return DBSCAN(eps=eps, min_samples=minpts, metric="precomputed").fit_predict(distances)


def dbscan(
    vectors: np.ndarray, eps: float, minpts: int, distances: np.ndarray | None = None
) -> PfcLabeling:
    if eps <= 0 or minpts < 1:
        raise ClusteringError(f"invalid DBSCAN parameters eps={eps} minpts={minpts}")
    if distances is None:
        distances = distance_matrix(vectors)
    labels = _dbscan_labels(distances, eps, minpts)
    return PfcLabeling(labels=[int(x) for x in labels], eps=eps, minpts=minpts)


def silhouette_from_distances(distances: np.ndarray, labels: Sequence[int] | np.ndarray) -> float | None:
    """Mean silhouette over non-Noise points, ``None`` when fewer than two clusters remain."""
    labels = np.asarray(labels)
    keep = labels != NOISE
    kept = labels[keep]
    clusters, sizes = np.unique(kept, return_counts=True)
    if len(clusters) < 2:
        return None
    if np.all(sizes == 1):
        return 0.0
    sub = distances[np.ix_(keep, keep)]
    return float(np.mean(silhouette_samples(sub, kept, metric="precomputed")))


def silhouette(vectors: np.ndarray, labeling: PfcLabeling | Sequence[int]) -> float | None:
    labels = labeling.labels if isinstance(labeling, PfcLabeling) else labeling
    return silhouette_from_distances(distance_matrix(vectors), labels)


def update_steps(
    eps_step: float, minpts_step: int, imp: float, cfg: AcdaConfig
) -> tuple[float, int]:
    """Grow both steps on improvement above ``tol``, otherwise scale by ``1 - imp``; clamp to bounds."""
    if imp > cfg.tol:
        eps_next = min(eps_step * (1 + imp), cfg.alpha)
        minpts_next = min(round(minpts_step * (1 + imp)), cfg.gamma)
    else:
        eps_next = max(eps_step * (1 - imp), cfg.beta)
        minpts_next = max(round(minpts_step * (1 - imp)), cfg.lam)
    eps_next = min(max(eps_next, cfg.beta), cfg.alpha)
    minpts_next = int(min(max(minpts_next, cfg.lam), cfg.gamma))
    return eps_next, minpts_next


def eps_grid(cfg: AcdaConfig, step: float) -> list[float]:
    count = int(np.floor((cfg.eps_max - cfg.eps_min) / step + 1e-9)) + 1
    return [round(cfg.eps_min + i * step, 10) for i in range(count)]


def minpts_grid(cfg: AcdaConfig, step: int) -> list[int]:
    return list(range(cfg.minpts_min, cfg.minpts_max + 1, max(int(step), 1)))


class _Cell(NamedTuple):
    eps: float
    minpts: int
    sc: float | None
    labels: np.ndarray

    @property
    def score(self) -> float:
        return -1.0 if self.sc is None else self.sc

    def better_than(self, other: _Cell | None) -> bool:
        if other is None:
            return True
        return (self.score, -self.eps, -self.minpts) > (other.score, -other.eps, -other.minpts)


def _scan(distances: np.ndarray, grid: list[tuple[float, int]], workers: int) -> list[_Cell]:
    def evaluate(cell: tuple[float, int]) -> _Cell:
        eps, minpts = cell
        labels = _dbscan_labels(distances, eps, minpts)
        return _Cell(eps, minpts, silhouette_from_distances(distances, labels), labels)

    if workers <= 1:
        return [evaluate(cell) for cell in grid]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(evaluate, grid))


def acda(vectors: np.ndarray, cfg: AcdaConfig) -> PfcLabeling:
    """Grid-search DBSCAN parameters, adapting the grid steps to the silhouette improvement."""
    vectors = np.asarray(vectors, dtype=float)
    if len(vectors) < cfg.minpts_min:
        raise ClusteringError(
            f"{len(vectors)} points is fewer than the smallest minPts {cfg.minpts_min}"
        )
    distances = distance_matrix(vectors)
    eps_step, minpts_step = cfg.eps_step, cfg.minpts_step
    sc_previous = -1.0
    best: _Cell | None = None
    history: list[AcdaIteration] = []

    for iteration in range(1, cfg.max_iters + 1):
        grid = [(e, m) for e in eps_grid(cfg, eps_step) for m in minpts_grid(cfg, minpts_step)]
        cells = _scan(distances, grid, cfg.workers)
        iteration_best: _Cell | None = None
        for cell in cells:
            if cell.better_than(iteration_best):
                iteration_best = cell
        sc_b = iteration_best.score if iteration_best else -1.0
        imp = sc_b - sc_previous
        if iteration_best is not None and iteration_best.sc is not None:
            if best is None or iteration_best.better_than(best):
                best = iteration_best

        history.append(
            AcdaIteration(
                iteration=iteration,
                eps_step=eps_step,
                minpts_step=minpts_step,
                best_eps=best.eps if best else None,
                best_minpts=best.minpts if best else None,
                best_sc=best.sc if best else None,
                imp=imp,
            )
        )
        logger.debug(
            "acda_iteration",
            iteration=iteration,
            cells=len(cells),
            sc_b=round(sc_b, 4),
            imp=round(imp, 4),
            eps_step=eps_step,
            minpts_step=minpts_step,
        )
        if iteration >= 2 and imp <= cfg.tol:
            break
        eps_step, minpts_step = update_steps(eps_step, minpts_step, imp, cfg)
        sc_previous = sc_b

    if best is None:
        raise ClusteringError("no clustering found: every (eps, minPts) cell yields fewer than 2 clusters")

    labeling = PfcLabeling(
        labels=[int(x) for x in best.labels],
        eps=best.eps,
        minpts=best.minpts,
        sc=best.sc,
        history=history,
    )
    logger.info(
        "formats_clustered",
        clusters=labeling.g,
        noise=labeling.labels.count(NOISE),
        eps=labeling.best_eps,
        minpts=labeling.best_minpts,
        sc=round(best.sc, 4),
        iterations=len(history),
    )
    return labeling
