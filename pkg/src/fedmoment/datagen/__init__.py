"""
Synthetic moment-localization corpus, non-IID client partitioning and the
c-validation upload.

Every function here is a pure function of its arguments and seed.

Usage:

    from fedmoment.datagen import (
        PartitionConfig, build_c_validation, generate_corpus,
        partition_dirichlet, uniform_class_mix,
    )

    corpus = generate_corpus(1600, 8, 8, seed=7, class_mix=uniform_class_mix())
    clients = partition_dirichlet(corpus, PartitionConfig(num_clients=16, alpha=0.0, seed=7))
    cval = build_c_validation(clients, fraction=0.01, seed=7)
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from fedmoment.temporal import (
    BINS_PER_AXIS,
    NUM_CLASSES,
    TemporalDistribution,
    assign_temporal_class,
    is_reachable,
    reachable_classes,
)


logger = logging.getLogger(__name__)

NOISE_STD = 0.05
NOISE_CLIP = 3.0
NUM_SCENES = 16
# alpha at or below this is treated as the alpha -> 0 limit
DEGENERATE_ALPHA = 1e-9


class DatagenError(ValueError):
    """Raised when corpus generation arguments are invalid."""


class PartitionError(ValueError):
    """Raised when a corpus cannot be split across clients."""


class LabelMode(str, enum.Enum):
    TEMPORAL_CLASS = 'temporal_class'
    SYNTHETIC_SCENE = 'synthetic_scene'


@dataclass(frozen=True, eq=False)
class MomentSample:
    sample_id: int
    video_features: np.ndarray
    query_features: np.ndarray
    gt_start: float
    gt_end: float
    temporal_class: int
    scene: int = 0

    def label(self, mode: LabelMode) -> int:
        if LabelMode(mode) is LabelMode.SYNTHETIC_SCENE:
            return self.scene
        return self.temporal_class

    @property
    def interval(self) -> tuple[float, float]:
        return (self.gt_start, self.gt_end)


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    samples: tuple[MomentSample, ...]

    def __post_init__(self):
        if not self.samples:
            raise PartitionError(f'Client {self.client_id} holds no samples')
        object.__setattr__(self, 'samples', tuple(self.samples))

    @property
    def n_k(self) -> int:
        return len(self.samples)

    @property
    def sample_ids(self) -> list[int]:
        return [s.sample_id for s in self.samples]

    @cached_property
    def features(self) -> np.ndarray:
        return stack_features(self.samples)

    @cached_property
    def targets(self) -> np.ndarray:
        return stack_targets(self.samples)


@dataclass(frozen=True)
class PartitionConfig:
    num_clients: int
    alpha: float = 0.0
    seed: int = 0
    label_mode: LabelMode = LabelMode.TEMPORAL_CLASS

    def __post_init__(self):
        if self.num_clients < 1:
            raise PartitionError(f'num_clients must be >= 1, got {self.num_clients}')
        if not (self.alpha >= 0.0 and math.isfinite(self.alpha)):
            raise PartitionError(f'alpha must be a finite nonnegative number, got {self.alpha}')
        object.__setattr__(self, 'label_mode', LabelMode(self.label_mode))


@dataclass(frozen=True, eq=False)
class PlantedMap:
    """The seeded linear map from (start, end) to feature space."""

    video_map: np.ndarray
    query_map: np.ndarray
    noise_std: float = NOISE_STD

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.video_map, dtype='<f8').tobytes())
        h.update(np.ascontiguousarray(self.query_map, dtype='<f8').tobytes())
        h.update(repr(self.noise_std).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Corpus(Sequence):
    samples: tuple[MomentSample, ...]
    d_v: int
    d_q: int
    seed: int
    planted_map: PlantedMap

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index):
        return self.samples[index]

    def __iter__(self) -> Iterator[MomentSample]:
        return iter(self.samples)

    @property
    def digest(self) -> str:
        return self.planted_map.digest


@dataclass(frozen=True, eq=False)
class FederatedData:
    """Everything the server needs to run an experiment."""

    clients: tuple[ClientDataset, ...]
    test: tuple[MomentSample, ...] = ()
    corpus_digest: str = ''
    d_v: int = field(init=False)
    d_q: int = field(init=False)

    def __post_init__(self):
        if not self.clients:
            raise PartitionError('FederatedData needs at least one client')
        object.__setattr__(self, 'clients', tuple(sorted(self.clients, key=lambda c: c.client_id)))
        object.__setattr__(self, 'test', tuple(self.test))
        first = self.clients[0].samples[0]
        object.__setattr__(self, 'd_v', len(first.video_features))
        object.__setattr__(self, 'd_q', len(first.query_features))


def stack_features(samples: Sequence[MomentSample]) -> np.ndarray:
    """Concatenate video and query features into one (n, d_v + d_q) matrix."""
    return np.vstack([np.concatenate((s.video_features, s.query_features)) for s in samples])


def stack_targets(samples: Sequence[MomentSample]) -> np.ndarray:
    return np.array([[s.gt_start, s.gt_end] for s in samples], dtype=np.float64)


def uniform_class_mix() -> TemporalDistribution:
    """Uniform mass over the reachable temporal classes."""
    reachable = reachable_classes()
    mass = [1.0 / len(reachable) if c in reachable else 0.0 for c in range(NUM_CLASSES)]
    return TemporalDistribution(tuple(mass))


def _draw_interval(rng: np.random.Generator, temporal_class: int) -> tuple[float, float]:
    start_bin, end_bin = divmod(temporal_class, BINS_PER_AXIS)
    width = 1.0 / BINS_PER_AXIS
    if start_bin == end_bin:
        # uniform over the triangle start <= end inside the diagonal cell
        a, b = sorted(rng.uniform(start_bin * width, (start_bin + 1) * width, size=2))
        return float(a), float(b)
    start = rng.uniform(start_bin * width, (start_bin + 1) * width)
    end = rng.uniform(end_bin * width, (end_bin + 1) * width)
    return float(start), float(end)


def generate_corpus(
    n_total: int,
    d_v: int,
    d_q: int,
    seed: int,
    class_mix: TemporalDistribution | None = None,
) -> Corpus:
    """
    Generate ``n_total`` synthetic video+query samples.

    Each sample draws a temporal class from ``class_mix`` and a moment
    uniformly inside that class's cell. Features are a planted linear map
    of the centred moment plus clipped Gaussian noise, so a small model
    can learn to invert them.
    """
    if n_total < 1:
        raise DatagenError(f'n_total must be >= 1, got {n_total}')
    if d_v < 1 or d_q < 1:
        raise DatagenError(f'Feature dimensions must be >= 1, got d_v={d_v}, d_q={d_q}')
    if class_mix is None:
        class_mix = uniform_class_mix()
    mix = class_mix.as_array()
    if mix.shape != (NUM_CLASSES,):
        raise DatagenError(f'class_mix must cover {NUM_CLASSES} classes, got {mix.shape[0]}')
    unreachable = [c for c in range(NUM_CLASSES) if mix[c] > 0 and not is_reachable(c)]
    if unreachable:
        raise DatagenError(f'class_mix puts mass on unreachable classes {unreachable}')

    rng = np.random.default_rng(seed)
    planted = PlantedMap(
        video_map=rng.standard_normal((d_v, 2)),
        query_map=rng.standard_normal((d_q, 2)),
    )
    classes = rng.choice(NUM_CLASSES, size=n_total, p=mix / mix.sum())
    scenes = rng.integers(0, NUM_SCENES, size=n_total)
    bound = NOISE_CLIP * planted.noise_std

    samples = []
    for sample_id in range(n_total):
        start, end = _draw_interval(rng, int(classes[sample_id]))
        centred = np.array([2.0 * start - 1.0, 2.0 * end - 1.0])
        noise_v = np.clip(rng.normal(0.0, planted.noise_std, d_v), -bound, bound)
        noise_q = np.clip(rng.normal(0.0, planted.noise_std, d_q), -bound, bound)
        samples.append(MomentSample(
            sample_id=sample_id,
            video_features=planted.video_map @ centred + noise_v,
            query_features=planted.query_map @ centred + noise_q,
            gt_start=start,
            gt_end=end,
            # recomputed rather than trusted, so float edges stay consistent
            temporal_class=assign_temporal_class(start, end),
            scene=int(scenes[sample_id]),
        ))
    logger.debug(f'Generated {n_total} samples, planted map {planted.digest}')
    return Corpus(tuple(samples), d_v, d_q, seed, planted)


def split_holdout(
    samples: Sequence[MomentSample],
    fraction: float,
    seed: int,
) -> tuple[tuple[MomentSample, ...], tuple[MomentSample, ...]]:
    """
    Split off a held-out test set of round(fraction * n) samples.

    Both halves keep ascending sample_id order.
    """
    if not 0.0 <= fraction < 1.0:
        raise DatagenError(f'Holdout fraction must lie in [0, 1), got {fraction}')
    samples = tuple(samples)
    n_test = int(round(fraction * len(samples)))
    if n_test == 0:
        return samples, ()
    rng = np.random.default_rng([seed, 0x7E57])
    chosen = set(rng.choice(len(samples), size=n_test, replace=False).tolist())
    train = tuple(s for i, s in enumerate(samples) if i not in chosen)
    test = tuple(s for i, s in enumerate(samples) if i in chosen)
    return train, test


def _proportional_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Floor of proportions * total, remainder to the largest fractional parts."""
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        order = np.argsort(-(raw - counts), kind='stable')
        counts[order[:remainder]] += 1
    return counts


def _repair_empty(assignment: list[list[MomentSample]]) -> None:
    for client_id, held in enumerate(assignment):
        if held:
            continue
        donor = max(range(len(assignment)), key=lambda k: (len(assignment[k]), -k))
        assignment[donor].sort(key=lambda s: s.sample_id)
        moved = assignment[donor].pop()
        held.append(moved)
        logger.debug(f'Moved sample {moved.sample_id} from client {donor} to empty client {client_id}')


def partition_dirichlet(samples: Sequence[MomentSample], cfg: PartitionConfig) -> tuple[ClientDataset, ...]:
    """
    Split samples across ``cfg.num_clients`` clients, non-IID by label.

    For alpha > 0 each label class is divided according to proportions
    drawn from a symmetric Dirichlet(alpha). For alpha ~ 0 each label class
    goes wholly to one client, round-robin in label order.
    """
    samples = tuple(samples)
    if cfg.num_clients > len(samples):
        raise PartitionError(
            f'Cannot split {len(samples)} samples across {cfg.num_clients} clients'
        )
    assignment: list[list[MomentSample]] = [[] for _ in range(cfg.num_clients)]
    if cfg.num_clients == 1:
        assignment[0].extend(samples)
    else:
        by_label: dict[int, list[MomentSample]] = {}
        for sample in samples:
            by_label.setdefault(sample.label(cfg.label_mode), []).append(sample)
        rng = np.random.default_rng(cfg.seed)
        for position, label in enumerate(sorted(by_label)):
            members = by_label[label]
            if cfg.alpha <= DEGENERATE_ALPHA:
                assignment[position % cfg.num_clients].extend(members)
                continue
            order = rng.permutation(len(members))
            proportions = rng.dirichlet(np.full(cfg.num_clients, cfg.alpha))
            counts = _proportional_counts(proportions, len(members))
            offset = 0
            for client_id, count in enumerate(counts):
                assignment[client_id].extend(members[i] for i in order[offset:offset + count])
                offset += count
        _repair_empty(assignment)

    clients = tuple(
        ClientDataset(client_id, tuple(sorted(held, key=lambda s: s.sample_id)))
        for client_id, held in enumerate(assignment)
    )
    logger.debug(f'Partition sizes: {[c.n_k for c in clients]}')
    return clients


def build_c_validation(
    clients: Sequence[ClientDataset],
    fraction: float,
    seed: int,
) -> tuple[MomentSample, ...]:
    """
    Collect the voluntary upload: ceil(fraction * n_k) random samples from
    every client, ordered by (client_id, sample_id).

    Clients keep the uploaded samples in their own training data.
    """
    if not 0.0 < fraction <= 1.0:
        raise DatagenError(f'c-validation fraction must lie in (0, 1], got {fraction}')
    uploaded = []
    for client in sorted(clients, key=lambda c: c.client_id):
        take = min(client.n_k, max(1, math.ceil(fraction * client.n_k - 1e-9)))
        rng = np.random.default_rng([seed, client.client_id])
        picked = rng.choice(client.n_k, size=take, replace=False)
        uploaded.extend(sorted((client.samples[i] for i in picked), key=lambda s: s.sample_id))
    return tuple(uploaded)
