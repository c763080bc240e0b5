"""Query-by-example retrieval: segment embeddings, trials, AP and mAP."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


@dataclass
class SegmentEmbedding:
    vector: np.ndarray
    segment_id: int
    labels: frozenset = frozenset()


@dataclass
class TrialSet:
    """All trials of one class; ``pairs`` index into the segment list."""

    class_id: int
    pairs: np.ndarray
    is_target: np.ndarray
    distance: np.ndarray
    n_per_side: int

    def __len__(self):
        return len(self.is_target)


@dataclass
class QbEResult:
    per_class: dict
    skipped: list = field(default_factory=list)

    @property
    def mean_ap(self) -> float:
        return mean_average_precision(list(self.per_class.values()))


def segment_embedding(window_embeddings, segment_id: int = 0, labels=frozenset()) -> SegmentEmbedding:
    """Arithmetic mean of a segment's window embeddings (not re-normalized)."""
    w = np.asarray(window_embeddings, dtype=np.float64)
    if w.ndim == 1:
        w = w[None]
    if len(w) == 0:
        raise ValueError("segment has no windows")
    vec = w.mean(axis=0)
    if not np.all(np.isfinite(vec)):
        raise ValueError("non-finite segment embedding")
    return SegmentEmbedding(vec, int(segment_id), frozenset(labels))


def segment_embeddings(window_vectors, segment_ids, window_labels=None) -> list[SegmentEmbedding]:
    """Group windows by segment id (in first-seen order) and average each group.

    A segment's label set is the union of its windows' labels.
    """
    window_vectors = np.asarray(window_vectors, dtype=np.float64)
    segment_ids = np.asarray(segment_ids)
    uniq, first, inverse = np.unique(segment_ids, return_index=True, return_inverse=True)
    out = []
    for k in np.argsort(first, kind="stable"):
        rows = np.flatnonzero(inverse == k)
        labels = frozenset().union(*(window_labels[i] for i in rows)) if window_labels is not None else frozenset()
        out.append(segment_embedding(window_vectors[rows], int(uniq[k]), labels))
    return out


def cosine_distance(u, v):
    """Row-wise ``1 - cos(u, v)`` with norms floored at 1e-12, clipped to [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.maximum(np.linalg.norm(u, axis=-1), NORM_FLOOR)
    nv = np.maximum(np.linalg.norm(v, axis=-1), NORM_FLOOR)
    return np.clip(1.0 - np.sum(u * v, axis=-1) / (nu * nv), 0.0, 2.0)


def build_qbe_trials(segments, per_class: int = 100, seed: int = 0, classes=None) -> tuple[dict, list]:
    """Per-class target (present-present) and nontarget (present-absent) trials.

    For each class, ``per_class`` present and ``per_class`` absent segments are
    sampled (fewer when the class lacks them, with a warning); segments are
    drawn regardless of which recording they come from. Classes with fewer
    than two present segments are skipped and returned in the second slot.
    """
    if per_class < 2:
        raise ConfigError("per_class must be >= 2")
    vectors = np.stack([s.vector for s in segments])
    if classes is None:
        classes = sorted(set().union(*(s.labels for s in segments)))
    trials, skipped = {}, []
    for c in classes:
        rng = np.random.default_rng([seed, int(c)])
        present = np.array([i for i, s in enumerate(segments) if c in s.labels], dtype=np.int64)
        absent = np.array([i for i, s in enumerate(segments) if c not in s.labels], dtype=np.int64)
        p = min(per_class, len(present), len(absent))
        if p < 2:
            logger.warning("class %s: %d present / %d absent segments; skipped", c, len(present), len(absent))
            skipped.append(c)
            continue
        if p < per_class:
            logger.warning("class %s: only %d segments per side available (asked %d)", c, p, per_class)
        pos = rng.choice(present, size=p, replace=False)
        neg = rng.choice(absent, size=p, replace=False)
        iu, ju = np.triu_indices(p, k=1)
        target_pairs = np.stack([pos[iu], pos[ju]], axis=1)
        nontarget_pairs = np.stack(np.meshgrid(pos, neg, indexing="ij"), axis=-1).reshape(-1, 2)
        pairs = np.concatenate([target_pairs, nontarget_pairs])
        is_target = np.concatenate([np.ones(len(target_pairs), bool), np.zeros(len(nontarget_pairs), bool)])
        dist = cosine_distance(vectors[pairs[:, 0]], vectors[pairs[:, 1]])
        trials[c] = TrialSet(int(c), pairs, is_target, dist, p)
    return trials, skipped


def average_precision(distances, is_target) -> float:
    """AP of ranking targets ahead of nontargets by ascending distance.

    Ties keep the input (trial id) order.
    """
    is_target = np.asarray(is_target, dtype=bool)
    if not is_target.any():
        raise ValueError("average precision is undefined without target trials")
    order = np.argsort(np.asarray(distances, dtype=np.float64), kind="stable")
    hits = is_target[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(aps) -> float:
    aps = list(aps)
    if not aps:
        raise ValueError("mean average precision of zero classes")
    return float(np.mean(aps))


def qbe_evaluate(segments, per_class: int = 100, seed: int = 0, classes=None) -> QbEResult:
    trials, skipped = build_qbe_trials(segments, per_class, seed, classes)
    return QbEResult({c: average_precision(t.distance, t.is_target) for c, t in trials.items()}, skipped)


def gap_recovery(baseline: float, topline: float, value: float) -> float:
    """Percent of the baseline-to-topline gap closed by ``value``."""
    if not topline > baseline:
        raise ValueError(f"topline {topline} must exceed baseline {baseline}")
    return 100.0 * (value - baseline) / (topline - baseline)
