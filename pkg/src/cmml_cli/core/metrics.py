"""Ranking and rating metrics plus the per-task evaluation report."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cmml_cli.utils.exceptions import MetricError

AGGREGATE = "AGGREGATE"


def rank_order(scores: np.ndarray, item_ids: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending item id."""
    return np.lexsort((item_ids, -scores))


def recall_at_n(
    scores: Sequence[float],
    item_ids: Sequence[int],
    positives: Iterable[int],
    n: int,
) -> float:
    """``|top-n ∩ positives| / |positives|``."""
    scores = np.asarray(scores, dtype=np.float64)
    item_ids = np.asarray(item_ids, dtype=np.int64)
    positive_set = set(int(p) for p in positives)
    if not positive_set:
        raise MetricError("recall_at_n: empty positive set")
    if n < 1:
        raise MetricError(f"recall_at_n: N must be >= 1, got {n}")
    if scores.shape != item_ids.shape:
        raise MetricError("recall_at_n: scores and item ids differ in length")
    if len(scores) < n:
        raise MetricError(f"recall_at_n: {len(scores)} scored items, fewer than N={n}")
    top = item_ids[rank_order(scores, item_ids)[:n]]
    return len(positive_set.intersection(int(i) for i in top)) / len(positive_set)


def _dcg(gains: np.ndarray) -> float:
    discounts = np.log2(np.arange(2, gains.size + 2))
    return float(np.sum(gains / discounts))


def ndcg_at_k(
    predicted_scores: Sequence[float],
    true_ratings: Sequence[float],
    k: int,
    item_ids: Optional[Sequence[int]] = None,
) -> float:
    """DCG with gain ``2^y - 1`` and discount ``log2(rank + 1)`` over the top-k, over ideal DCG."""
    scores = np.asarray(predicted_scores, dtype=np.float64)
    ratings = np.asarray(true_ratings, dtype=np.float64)
    ids = np.arange(scores.size) if item_ids is None else np.asarray(item_ids, dtype=np.int64)
    if k < 1:
        raise MetricError(f"ndcg_at_k: K must be >= 1, got {k}")
    if scores.shape != ratings.shape or scores.shape != ids.shape:
        raise MetricError("ndcg_at_k: scores, ratings and ids differ in length")
    gains = np.power(2.0, ratings) - 1.0
    if not np.any(gains > 0):
        raise MetricError("ndcg_at_k: all gains are zero, normalisation undefined")
    predicted = gains[rank_order(scores, ids)][:k]
    ideal = gains[rank_order(gains, ids)][:k]
    return _dcg(predicted) / _dcg(ideal)


def mae(predictions: Sequence[float], labels: Sequence[float]) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape != labels.shape:
        raise MetricError(f"mae: lengths differ ({predictions.size} vs {labels.size})")
    if predictions.size == 0:
        raise MetricError("mae: empty input")
    return float(np.mean(np.abs(labels - predictions)))


def mse(predictions: Sequence[float], labels: Sequence[float]) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise MetricError("mse: inputs must be non-empty and of equal length")
    return float(np.mean((labels - predictions) ** 2))


@dataclass
class EvalReport:
    """Per-task metric values; aggregates are unweighted means over tasks."""

    rows: List[Tuple[int, str, float]] = field(default_factory=list)

    def add(self, task_id: int, metric: str, value: float) -> None:
        if not np.isfinite(value):
            raise MetricError(f"Metric {metric} is not finite on task {task_id}")
        self.rows.append((int(task_id), metric, float(value)))

    @property
    def metrics(self) -> List[str]:
        return sorted({metric for _, metric, _ in self.rows})

    def task_count(self, metric: str) -> int:
        return sum(1 for _, m, _ in self.rows if m == metric)

    def aggregate(self) -> Dict[str, float]:
        return {
            metric: float(np.mean([v for _, m, v in self.rows if m == metric]))
            for metric in self.metrics
        }

    def to_frame(self) -> pd.DataFrame:
        ordered = sorted(self.rows, key=lambda row: (row[0], row[1]))
        aggregates = [(AGGREGATE, metric, value) for metric, value in self.aggregate().items()]
        return pd.DataFrame(ordered + aggregates, columns=["task_id", "metric", "value"])

    def save(self, path: Path) -> Path:
        """CSV ``task_id,metric,value`` with one ``AGGREGATE`` row per metric."""
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path
