"""
Temporal IoU, R(1, m) and c-validation client scoring.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from fedmoment.localizer import PredictionBatch


DEFAULT_THRESHOLDS = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_WEIGHTS = (0.1, 0.2, 0.2, 0.4, 0.1)
REPORT_THRESHOLDS = (0.3, 0.5, 0.7)


class MetricError(ValueError):
    """Raised when metric inputs are malformed."""


@dataclass(frozen=True)
class ScoringConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    weights: tuple[float, ...] = DEFAULT_WEIGHTS

    def __post_init__(self):
        thresholds = tuple(float(h) for h in self.thresholds)
        weights = tuple(float(e) for e in self.weights)
        if len(thresholds) != len(weights) or not thresholds:
            raise MetricError('thresholds and weights must be nonempty and of equal length')
        if any(not 0.0 < h < 1.0 for h in thresholds):
            raise MetricError(f'thresholds must lie in (0, 1): {thresholds}')
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise MetricError(f'thresholds must be strictly increasing: {thresholds}')
        if any(e < 0.0 for e in weights):
            raise MetricError(f'weights must be nonnegative: {weights}')
        object.__setattr__(self, 'thresholds', thresholds)
        object.__setattr__(self, 'weights', weights)


@dataclass(frozen=True)
class ClientScore:
    client_id: int
    raw_score: float
    attention: float


def iou(pred: tuple[float, float], gt: tuple[float, float]) -> float:
    """
    Intersection over union of two closed intervals.

    Two identical points score 1; distinct zero-length intervals score 0.
    """
    (ps, pe), (gs, ge) = pred, gt
    if ps > pe or gs > ge:
        raise MetricError(f'Inverted interval: pred={pred}, gt={gt}')
    intersection = max(0.0, min(pe, ge) - max(ps, gs))
    union = (pe - ps) + (ge - gs) - intersection
    if union <= 0.0:
        return 1.0 if (ps, pe) == (gs, ge) else 0.0
    return intersection / union


def iou_batch(pred_start, pred_end, gt_start, gt_end) -> np.ndarray:
    ps, pe = np.asarray(pred_start, dtype=np.float64), np.asarray(pred_end, dtype=np.float64)
    gs, ge = np.asarray(gt_start, dtype=np.float64), np.asarray(gt_end, dtype=np.float64)
    if np.any(ps > pe) or np.any(gs > ge):
        raise MetricError('Inverted interval in batch')
    intersection = np.maximum(0.0, np.minimum(pe, ge) - np.maximum(ps, gs))
    union = (pe - ps) + (ge - gs) - intersection
    identical = (ps == gs) & (pe == ge)
    safe = np.where(union > 0.0, union, 1.0)
    return np.where(union > 0.0, intersection / safe, np.where(identical, 1.0, 0.0))


def _gt_arrays(gts: Sequence[tuple[float, float]] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def _batch_ious(predictions: PredictionBatch, gts) -> np.ndarray:
    gt_start, gt_end = _gt_arrays(gts)
    if len(predictions) != gt_start.shape[0]:
        raise MetricError(f'{len(predictions)} predictions for {gt_start.shape[0]} ground truths')
    if gt_start.shape[0] == 0:
        raise MetricError('Recall is undefined on zero samples')
    return iou_batch(predictions.pred_start, predictions.pred_end, gt_start, gt_end)


def _recall(ious: np.ndarray, m: float) -> float:
    if not 0.0 < m <= 1.0:
        raise MetricError(f'm must lie in (0, 1], got {m}')
    return float(np.count_nonzero(ious > m)) / ious.shape[0]


def recall_at_1(predictions: PredictionBatch, gts, m: float) -> float:
    """Fraction of samples whose prediction has IoU strictly above ``m``."""
    return _recall(_batch_ious(predictions, gts), m)


def evaluate(predictions: PredictionBatch, gts, ms: Iterable[float] = REPORT_THRESHOLDS) -> dict[float, float]:
    ious = _batch_ious(predictions, gts)
    return {m: _recall(ious, m) for m in ms}


def raw_c_score(predictions: PredictionBatch, gts, cfg: ScoringConfig = ScoringConfig()) -> float:
    """Weighted sum of R(1, h) over the scoring thresholds."""
    ious = _batch_ious(predictions, gts)
    return sum(_recall(ious, h) * e for h, e in zip(cfg.thresholds, cfg.weights))


def attention_weights(raw_scores: Iterable[tuple[int, float]]) -> list[ClientScore]:
    """
    Softmax of raw c-validation scores across all clients of a round,
    ordered by client_id.
    """
    ordered = sorted(raw_scores, key=lambda item: item[0])
    if not ordered:
        raise MetricError('attention_weights needs at least one client')
    ids = [client_id for client_id, _ in ordered]
    if len(set(ids)) != len(ids):
        raise MetricError(f'Duplicate client ids in scores: {ids}')
    scores = np.array([score for _, score in ordered], dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise MetricError(f'Scores must be finite: {scores.tolist()}')
    exp = np.exp(scores - scores.max())
    attention = exp / exp.sum()
    return [
        ClientScore(client_id, float(score), float(a))
        for client_id, score, a in zip(ids, scores, attention)
    ]


def uniform_weights(raw_scores: Iterable[tuple[int, float]]) -> list[ClientScore]:
    """Equal attention 1/C for every client, the federated-averaging weighting."""
    ordered = sorted(raw_scores, key=lambda item: item[0])
    if not ordered:
        raise MetricError('uniform_weights needs at least one client')
    share = 1.0 / len(ordered)
    return [ClientScore(client_id, float(score), share) for client_id, score in ordered]


def is_normalized(scores: Sequence[ClientScore], tolerance: float = 1e-12) -> bool:
    return abs(math.fsum(s.attention for s in scores) - 1.0) <= tolerance
