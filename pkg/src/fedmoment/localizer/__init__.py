"""
A small differentiable moment localizer and the client-side training loop.

The model concatenates video and query features, applies one tanh hidden
layer and three heads: a start head, a length head and a 16-way temporal
class head. Predictions are

    pred_start  = sigmoid(s_raw)
    pred_end    = pred_start + (1 - pred_start) * sigmoid(l_raw)
    class_probs = softmax(class_logits)

so 0 <= pred_start <= pred_end <= 1 holds for every parameter setting.
Gradients are computed analytically; there is no autodiff dependency.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from fedmoment.datagen import ClientDataset, MomentSample, stack_features, stack_targets
from fedmoment.temporal import NUM_CLASSES, TemporalDistribution, gap_loss_gradient, temporal_gap_loss


logger = logging.getLogger(__name__)

INIT_SCALE = 0.1


class LayoutError(ValueError):
    """Raised when parameters do not fit the model or the data."""


class DivergenceError(ValueError):
    """Raised when local training produces a non-finite parameter."""

    def __init__(self, client_id, epoch, step):
        super().__init__(
            f'Client {client_id} diverged at epoch {epoch}, step {step}'
        )
        self.client_id = client_id
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class ModelLayout:
    d_v: int
    d_q: int
    hidden: int
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if min(self.d_v, self.d_q, self.hidden, self.num_classes) < 1:
            raise LayoutError(f'All model dimensions must be >= 1: {self}')

    @property
    def d_in(self) -> int:
        return self.d_v + self.d_q

    @property
    def num_heads(self) -> int:
        return 2 + self.num_classes

    @property
    def size(self) -> int:
        return self.d_in * self.hidden + self.hidden + self.hidden * self.num_heads + self.num_heads

    @cached_property
    def digest(self) -> int:
        key = f'{self.d_v}:{self.d_q}:{self.hidden}:{self.num_classes}'.encode()
        return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), 'little')


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Flat model weights; the unit of handoff and aggregation."""

    values: np.ndarray
    layout: ModelLayout

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.layout.size,):
            raise LayoutError(
                f'Expected {self.layout.size} parameters, got shape {values.shape}'
            )
        if not np.all(np.isfinite(values)):
            raise LayoutError('Parameter values must be finite')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def layout_digest(self) -> int:
        return self.layout.digest

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PredictionBatch:
    pred_start: np.ndarray
    pred_end: np.ndarray
    class_probs: np.ndarray

    def __len__(self):
        return self.pred_start.shape[0]

    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.pred_start.tolist(), self.pred_end.tolist()))


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 10
    learning_rate: float = 0.05
    lambda_dis: float = 0.1
    batch_size: int = 32
    seed: int = 0
    hidden: int = 16

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValueError(f'local_epochs must be >= 1, got {self.local_epochs}')
        if self.batch_size < 1:
            raise ValueError(f'batch_size must be >= 1, got {self.batch_size}')
        if not (self.learning_rate >= 0.0 and math.isfinite(self.learning_rate)):
            raise ValueError(f'learning_rate must be finite and nonnegative, got {self.learning_rate}')
        if not (self.lambda_dis >= 0.0 and math.isfinite(self.lambda_dis)):
            raise ValueError(f'lambda_dis must be finite and nonnegative, got {self.lambda_dis}')
        if self.hidden < 1:
            raise ValueError(f'hidden must be >= 1, got {self.hidden}')


class Weights(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def _views(values: np.ndarray, layout: ModelLayout) -> Weights:
    h, d, k = layout.hidden, layout.d_in, layout.num_heads
    offsets = np.cumsum([0, h * d, h, k * h, k])
    return Weights(
        values[offsets[0]:offsets[1]].reshape(h, d),
        values[offsets[1]:offsets[2]],
        values[offsets[2]:offsets[3]].reshape(k, h),
        values[offsets[3]:offsets[4]],
    )


def unpack(params: ParameterVector) -> Weights:
    """Named, read-only views of the weight blocks."""
    return _views(params.values, params.layout)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def init_model(d_v: int, d_q: int, hidden: int, seed: int) -> ParameterVector:
    layout = ModelLayout(d_v, d_q, hidden)
    rng = np.random.default_rng(seed)
    return ParameterVector(rng.uniform(-INIT_SCALE, INIT_SCALE, layout.size), layout)


def _check_dims(layout: ModelLayout, features: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != layout.d_in:
        raise LayoutError(
            f'Model expects {layout.d_in} input features '
            f'(d_v={layout.d_v}, d_q={layout.d_q}), got shape {features.shape}'
        )


def _predict(values: np.ndarray, layout: ModelLayout, features: np.ndarray):
    w = _views(values, layout)
    hidden = np.tanh(features @ w.w1.T + w.b1)
    out = hidden @ w.w2.T + w.b2
    start = _sigmoid(out[:, 0])
    length = _sigmoid(out[:, 1])
    end = start + (1.0 - start) * length
    probs = _softmax(out[:, 2:])
    return hidden, start, length, end, probs


def predict_features(params: ParameterVector, features: np.ndarray) -> PredictionBatch:
    _check_dims(params.layout, features)
    _, start, _, end, probs = _predict(params.values, params.layout, features)
    return PredictionBatch(start, np.clip(end, start, 1.0), probs)


def forward(params: ParameterVector, samples: Sequence[MomentSample]) -> PredictionBatch:
    """Predictions for ``samples`` in input order."""
    if not samples:
        n = 0
        return PredictionBatch(np.zeros(n), np.zeros(n), np.zeros((n, params.layout.num_classes)))
    return predict_features(params, stack_features(samples))


def _loss_and_grad(
    values: np.ndarray,
    layout: ModelLayout,
    features: np.ndarray,
    targets: np.ndarray,
    p: np.ndarray,
    lambda_dis: float,
) -> tuple[float, np.ndarray]:
    n = features.shape[0]
    w = _views(values, layout)
    hidden, start, length, end, probs = _predict(values, layout, features)

    res_start = start - targets[:, 0]
    res_end = end - targets[:, 1]
    loss = float(np.mean(res_start ** 2 + res_end ** 2))

    d_start = 2.0 * res_start / n
    d_end = 2.0 * res_end / n
    d_out = np.zeros((n, layout.num_heads))
    # end depends on start through (1 - start) * length
    d_out[:, 0] = (d_start + d_end * (1.0 - length)) * start * (1.0 - start)
    d_out[:, 1] = d_end * (1.0 - start) * length * (1.0 - length)

    if lambda_dis > 0.0:
        q_batch = probs.mean(axis=0)
        loss += lambda_dis * temporal_gap_loss(q_batch, p)
        d_q = lambda_dis * gap_loss_gradient(q_batch, p) / n
        d_out[:, 2:] = probs * (d_q - probs @ d_q)[:, None]

    d_hidden = (d_out @ w.w2) * (1.0 - hidden ** 2)
    grad = np.concatenate((
        (d_hidden.T @ features).ravel(),
        d_hidden.sum(axis=0),
        (d_out.T @ hidden).ravel(),
        d_out.sum(axis=0),
    ))
    return loss, grad


def _as_array(p: TemporalDistribution) -> np.ndarray:
    return p.as_array() if isinstance(p, TemporalDistribution) else np.asarray(p, dtype=np.float64)


def local_loss(
    params: ParameterVector,
    batch: Sequence[MomentSample],
    p: TemporalDistribution,
    lambda_dis: float,
) -> tuple[float, np.ndarray]:
    """
    Squared endpoint error plus lambda_dis * KL(q_batch || p).

    q_batch is the mean predicted class distribution over the batch.
    Returns the loss and its exact gradient with respect to ``params``.
    """
    if not batch:
        raise ValueError('local_loss needs a nonempty batch')
    features = stack_features(batch)
    _check_dims(params.layout, features)
    return _loss_and_grad(
        params.values, params.layout, features, stack_targets(batch), _as_array(p), lambda_dis
    )


def client_update(
    init: ParameterVector,
    data: ClientDataset,
    p: TemporalDistribution,
    cfg: TrainConfig,
) -> ParameterVector:
    """
    Run ``cfg.local_epochs`` epochs of mini-batch gradient descent on one
    client's data, starting from ``init``.

    Batches follow a per-epoch permutation drawn from ``cfg.seed``.
    """
    features, targets = data.features, data.targets
    _check_dims(init.layout, features)
    target_dist = _as_array(p)
    rng = np.random.default_rng(cfg.seed)
    values = init.values.copy()
    for epoch in range(cfg.local_epochs):
        order = rng.permutation(data.n_k)
        for step, offset in enumerate(range(0, data.n_k, cfg.batch_size)):
            idx = order[offset:offset + cfg.batch_size]
            with np.errstate(all='ignore'):
                _, grad = _loss_and_grad(
                    values, init.layout, features[idx], targets[idx], target_dist, cfg.lambda_dis
                )
                values = values - cfg.learning_rate * grad
            if not np.all(np.isfinite(values)):
                raise DivergenceError(data.client_id, epoch, step)
    logger.debug(f'Client {data.client_id} finished {cfg.local_epochs} epochs on {data.n_k} samples')
    return ParameterVector(values, init.layout)
