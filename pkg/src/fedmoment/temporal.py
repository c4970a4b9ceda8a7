"""
Temporal class grid, class distributions and the temporal-distribution-gap
loss.

A moment's temporal class is the pair (quarter of its start, quarter of
its end) laid out row-major over a 4x4 grid, giving 16 classes of which 10
are reachable (start never lies after end).
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np


BINS_PER_AXIS = 4
NUM_CLASSES = BINS_PER_AXIS * BINS_PER_AXIS

_SUM_TOLERANCE = 1e-9


class TemporalError(ValueError):
    """Raised when a temporal class or distribution precondition fails."""


@dataclass(frozen=True)
class TemporalDistribution:
    """
    Probability mass over temporal classes.

    The protocol always works with 16 classes; shorter vectors are
    accepted so that small worked examples stay readable.
    """

    mass: tuple[float, ...]

    def __post_init__(self):
        mass = tuple(float(m) for m in self.mass)
        if not mass:
            raise TemporalError('Distribution must have at least one class')
        if any(not math.isfinite(m) or m < 0.0 for m in mass):
            raise TemporalError(f'Distribution entries must be finite and nonnegative: {mass}')
        total = math.fsum(mass)
        if abs(total - 1.0) > _SUM_TOLERANCE:
            raise TemporalError(f'Distribution must sum to 1, got {total!r}')
        object.__setattr__(self, 'mass', mass)

    @classmethod
    def from_array(cls, values) -> TemporalDistribution:
        return cls(tuple(np.asarray(values, dtype=np.float64).tolist()))

    @classmethod
    def uniform(cls, num_classes: int = NUM_CLASSES) -> TemporalDistribution:
        return cls((1.0 / num_classes,) * num_classes)

    @property
    def num_classes(self) -> int:
        return len(self.mass)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mass, dtype=np.float64)

    def __len__(self):
        return len(self.mass)

    def __getitem__(self, index):
        return self.mass[index]


@dataclass(frozen=True)
class ClassCounts:
    """Raw per-class counts, before any smoothing."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise TemporalError('ClassCounts must have at least one class')
        if any(c < 0 for c in counts):
            raise TemporalError(f'Class counts must be nonnegative: {counts}')
        object.__setattr__(self, 'counts', counts)

    @property
    def total(self) -> int:
        return sum(self.counts)


def assign_temporal_class(start: float, end: float, bins: int = BINS_PER_AXIS) -> int:
    """
    Map a normalized moment (start, end) to its temporal class.

    Timepoints exactly at 1.0 fall into the last bin.
    """
    if not (0.0 <= start <= 1.0 and 0.0 <= end <= 1.0):
        raise TemporalError(f'Timepoints must lie in [0, 1], got ({start}, {end})')
    if start > end:
        raise TemporalError(f'Moment start {start} lies after its end {end}')
    start_bin = min(math.floor(bins * start), bins - 1)
    end_bin = min(math.floor(bins * end), bins - 1)
    return bins * start_bin + end_bin


def is_reachable(temporal_class: int, bins: int = BINS_PER_AXIS) -> bool:
    start_bin, end_bin = divmod(temporal_class, bins)
    return end_bin >= start_bin


def reachable_classes(bins: int = BINS_PER_AXIS) -> list[int]:
    return [c for c in range(bins * bins) if is_reachable(c, bins)]


def class_counts(samples: Iterable, num_classes: int = NUM_CLASSES) -> ClassCounts:
    """Histogram of ``temporal_class`` over a collection of samples."""
    labels = np.fromiter((s.temporal_class for s in samples), dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    return ClassCounts(tuple(counts.tolist()))


def counts_to_distribution(counts: ClassCounts | Sequence[int], smooth: bool) -> TemporalDistribution:
    """
    Normalize class counts into a distribution.

    With ``smooth`` every count is incremented by one before
    normalization, so every class ends up with positive mass.
    """
    if not isinstance(counts, ClassCounts):
        counts = ClassCounts(tuple(counts))
    values = np.asarray(counts.counts, dtype=np.float64)
    if smooth:
        values = values + 1.0
    total = values.sum()
    if total <= 0:
        raise TemporalError('Cannot normalize all-zero class counts without smoothing')
    return TemporalDistribution.from_array(values / total)


def population_distribution(
    clients: Sequence[tuple[int, TemporalDistribution]]
) -> TemporalDistribution:
    """
    Size-weighted average of client distributions, sum_k (n_k / n) q_k.
    """
    if not clients:
        raise TemporalError('Population distribution needs at least one client')
    sizes = [n_k for n_k, _ in clients]
    if any(n_k < 1 for n_k in sizes):
        raise TemporalError(f'Client sizes must be positive: {sizes}')
    widths = {q.num_classes for _, q in clients}
    if len(widths) != 1:
        raise TemporalError(f'Client distributions disagree on class count: {sorted(widths)}')
    n = float(sum(sizes))
    mixed = np.zeros(widths.pop(), dtype=np.float64)
    for n_k, q_k in clients:
        mixed += (n_k / n) * q_k.as_array()
    return TemporalDistribution.from_array(mixed / mixed.sum())


def _check_pair(q_pred: TemporalDistribution, p: TemporalDistribution) -> tuple[np.ndarray, np.ndarray]:
    q = q_pred.as_array() if isinstance(q_pred, TemporalDistribution) else np.asarray(q_pred, dtype=np.float64)
    target = p.as_array() if isinstance(p, TemporalDistribution) else np.asarray(p, dtype=np.float64)
    if q.shape != target.shape:
        raise TemporalError(f'Distribution lengths differ: {q.shape} vs {target.shape}')
    if np.any(target <= 0.0):
        raise TemporalError('Population distribution must be strictly positive; smooth the counts')
    return q, target


def temporal_gap_loss(q_pred: TemporalDistribution, p: TemporalDistribution) -> float:
    """
    KL(q_pred || p) in nats.

    Classes with zero predicted mass contribute nothing.
    """
    q, target = _check_pair(q_pred, p)
    support = q > 0.0
    terms = q[support] * np.log(q[support] / target[support])
    return max(float(terms.sum()), 0.0)


def gap_loss_gradient(q_pred: TemporalDistribution, p: TemporalDistribution) -> np.ndarray:
    """
    Partial derivatives of KL(q_pred || p) with respect to each q_pred(x).

    Classes with zero predicted mass get 0, matching temporal_gap_loss
    which drops them. Through a softmax head those classes carry no
    probability, so the chain rule sends nothing through them either.
    """
    q, target = _check_pair(q_pred, p)
    grad = np.zeros_like(q)
    support = q > 0.0
    grad[support] = np.log(q[support] / target[support]) + 1.0
    return grad


def distribution_to_text(dist: TemporalDistribution) -> str:
    return ','.join(f'{m:.9g}' for m in dist.mass)


def distribution_from_text(text: str) -> TemporalDistribution:
    try:
        values = [float(token) for token in text.strip().split(',')]
    except ValueError as err:
        raise TemporalError(f'Malformed distribution text: {text!r}') from err
    return TemporalDistribution.from_array(np.asarray(values) / math.fsum(values))
