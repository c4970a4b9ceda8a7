"""
The federation server: grouping, grouped sequential rounds, c-validation
weighted aggregation and the simulated cost model.

Clients are split into G groups. In every round the groups run
independently (and possibly concurrently); inside a group the clients
train one after another, each starting from its predecessor's weights,
while the first client of each group starts from the global model. Every
client's snapshot is scored on the c-validation set, and the server
aggregates all snapshots with softmax attention over those scores.

With G = C and uniform weights a round is exactly one round of federated
averaging.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from fedmoment.datagen import ClientDataset, FederatedData, MomentSample, build_c_validation, stack_features, stack_targets
from fedmoment.federation.executors import get_executor
from fedmoment.localizer import (
    ParameterVector,
    TrainConfig,
    client_update,
    init_model,
    predict_features,
)
from fedmoment.metrics import (
    REPORT_THRESHOLDS,
    ClientScore,
    ScoringConfig,
    attention_weights,
    evaluate,
    raw_c_score,
    uniform_weights,
)
from fedmoment.temporal import TemporalDistribution, class_counts, counts_to_distribution, population_distribution


logger = logging.getLogger(__name__)

_UINT64 = 0xFFFFFFFFFFFFFFFF


class SchedulingError(ValueError):
    """Raised when a group plan or round configuration is inconsistent."""


class AggregationError(ValueError):
    """Raised when snapshots cannot be combined."""


class AggregationMode(str, enum.Enum):
    C_VALIDATION_SOFTMAX = 'c_validation_softmax'
    UNIFORM = 'uniform'


@dataclass(frozen=True)
class RunConfig:
    num_clients: int
    num_groups: int
    rounds: int
    participation_fraction: float = 1.0
    regroup_each_round: bool = False
    unit_client_cost: float = 1.0
    aggregation_mode: AggregationMode = AggregationMode.C_VALIDATION_SOFTMAX
    seed: int = 0
    cval_fraction: float = 0.01
    convergence_m: float = 0.5
    scoring: ScoringConfig = field(default_factory=ScoringConfig)

    def __post_init__(self):
        if self.num_clients < 1:
            raise SchedulingError(f'num_clients must be >= 1, got {self.num_clients}')
        if not 1 <= self.num_groups <= self.num_clients:
            raise SchedulingError(
                f'num_groups must lie in [1, {self.num_clients}], got {self.num_groups}'
            )
        if self.rounds < 1:
            raise SchedulingError(f'rounds must be >= 1, got {self.rounds}')
        if not 0.0 < self.participation_fraction <= 1.0:
            raise SchedulingError(
                f'participation_fraction must lie in (0, 1], got {self.participation_fraction}'
            )
        if not self.unit_client_cost > 0.0:
            raise SchedulingError(f'unit_client_cost must be positive, got {self.unit_client_cost}')
        if not 0.0 < self.cval_fraction <= 1.0:
            raise SchedulingError(f'cval_fraction must lie in (0, 1], got {self.cval_fraction}')
        object.__setattr__(self, 'aggregation_mode', AggregationMode(self.aggregation_mode))


@dataclass(frozen=True)
class GroupPlan:
    """Ordered groups of client ids; order inside a group is execution order."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(c) for c in group) for group in self.groups)
        if not groups or any(not group for group in groups):
            raise SchedulingError('A group plan needs at least one group and no empty groups')
        members = [c for group in groups for c in group]
        if len(set(members)) != len(members):
            raise SchedulingError(f'Client appears in more than one group: {groups}')
        sizes = [len(group) for group in groups]
        if max(sizes) - min(sizes) > 1:
            raise SchedulingError(f'Group sizes differ by more than one: {sizes}')
        object.__setattr__(self, 'groups', groups)

    @property
    def clients(self) -> list[int]:
        return sorted(c for group in self.groups for c in group)

    @property
    def max_group_size(self) -> int:
        return max(len(group) for group in self.groups)


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    client_scores: tuple[ClientScore, ...]
    global_metrics: dict[float, float]
    simulated_time: float
    wall_clock: float = field(default=0.0, compare=False)

    def attention(self, client_id: int) -> float:
        for score in self.client_scores:
            if score.client_id == client_id:
                return score.attention
        return 0.0


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    reports: tuple[RoundReport, ...]
    final_model: ParameterVector
    population: TemporalDistribution
    plan: GroupPlan
    cval_size: int


ClientHook = Callable[[int, int, ParameterVector, ParameterVector], None]


def client_seed(run_seed: int, train_seed: int, round_index: int, client_id: int) -> int:
    """Training seed for one client in one round, independent of scheduling."""
    entropy = [run_seed & _UINT64, train_seed & _UINT64, round_index, client_id]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def _round_seed(run_seed: int, round_index: int) -> int:
    entropy = [run_seed & _UINT64, round_index, 0x6E0]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def make_groups(C: int, G: int, seed: int, client_ids: Sequence[int] | None = None) -> GroupPlan:
    """
    Shuffle client ids with ``seed`` and cut them into G contiguous chunks
    of near-equal size, larger chunks first.
    """
    ids = list(range(C)) if client_ids is None else list(client_ids)
    if not 1 <= G <= len(ids):
        raise SchedulingError(f'Cannot form {G} groups from {len(ids)} clients')
    rng = np.random.default_rng(seed & _UINT64)
    shuffled = rng.permutation(np.asarray(ids, dtype=np.int64))
    return GroupPlan(tuple(tuple(chunk.tolist()) for chunk in np.array_split(shuffled, G)))


def select_participants(C: int, fraction: float, seed: int, round_index: int) -> list[int]:
    if fraction >= 1.0:
        return list(range(C))
    count = max(1, math.ceil(fraction * C - 1e-9))
    rng = np.random.default_rng([seed & _UINT64, round_index, 0x5E1EC7])
    return sorted(rng.choice(C, size=count, replace=False).tolist())


def simulate_time(plan: GroupPlan, u: float) -> float:
    """
    Simulated duration of one round: groups run side by side, clients in a
    group run back to back, and aggregation is free.
    """
    if not u > 0.0:
        raise SchedulingError(f'Unit client cost must be positive, got {u}')
    return u * plan.max_group_size


def aggregate(
    snapshots: Sequence[tuple[int, ParameterVector]],
    weights: Sequence[ClientScore],
) -> ParameterVector:
    """
    Weighted sum of client snapshots, accumulated in ascending client_id
    order.
    """
    ordered = sorted(snapshots, key=lambda item: item[0])
    by_client = {score.client_id: score.attention for score in weights}
    ids = [client_id for client_id, _ in ordered]
    if not ordered:
        raise AggregationError('Nothing to aggregate')
    if len(set(ids)) != len(ids) or set(ids) != set(by_client) or len(by_client) != len(weights):
        raise AggregationError(f'Snapshot clients {ids} do not match weighted clients {sorted(by_client)}')
    layout = ordered[0][1].layout
    if any(params.layout != layout for _, params in ordered):
        raise AggregationError('Snapshots have mismatched layouts')
    total = math.fsum(by_client.values())
    if abs(total - 1.0) > 1e-9:
        raise AggregationError(f'Aggregation weights sum to {total!r}, not 1')

    combined = np.zeros(layout.size, dtype=np.float64)
    for client_id, params in ordered:
        combined = combined + by_client[client_id] * params.values
    return ParameterVector(combined, layout)


def run_round(
    global_params: ParameterVector,
    plan: GroupPlan,
    clients: Sequence[ClientDataset],
    p: TemporalDistribution,
    cval: Sequence[MomentSample],
    cfg: RunConfig,
    tcfg: TrainConfig,
    *,
    round_index: int = 1,
    test: Sequence[MomentSample] = (),
    time_offset: float = 0.0,
    executor=None,
    on_client_update: ClientHook | None = None,
) -> tuple[ParameterVector, RoundReport]:
    """
    Run one communication round and aggregate every client snapshot.
    """
    began = time.perf_counter()
    by_id = {client.client_id: client for client in clients}
    missing = [c for c in plan.clients if c not in by_id]
    if missing:
        raise SchedulingError(f'Plan refers to unknown clients {missing}')
    if not cval:
        raise SchedulingError('The c-validation set is empty')
    cval_features, cval_targets = stack_features(cval), stack_targets(cval)

    def _run_chain(group):
        results = []
        current = global_params
        for client_id in group:
            client_cfg = replace(tcfg, seed=client_seed(cfg.seed, tcfg.seed, round_index, client_id))
            snapshot = client_update(current, by_id[client_id], p, client_cfg)
            if on_client_update is not None:
                on_client_update(round_index, client_id, current, snapshot)
            raw = raw_c_score(predict_features(snapshot, cval_features), cval_targets, cfg.scoring)
            results.append((client_id, snapshot, raw))
            current = snapshot
        return results

    executor = executor or get_executor()
    chains = executor.run([lambda group=group: _run_chain(group) for group in plan.groups])
    trained = sorted((item for chain in chains for item in chain), key=lambda item: item[0])
    if [client_id for client_id, _, _ in trained] != plan.clients:
        raise SchedulingError('Round did not train every planned client exactly once')

    raw_scores = [(client_id, raw) for client_id, _, raw in trained]
    if cfg.aggregation_mode is AggregationMode.UNIFORM:
        scores = uniform_weights(raw_scores)
    else:
        scores = attention_weights(raw_scores)
    new_global = aggregate([(client_id, snapshot) for client_id, snapshot, _ in trained], scores)
    for score in scores:
        logger.debug(
            f'Round {round_index} client {score.client_id}: '
            f'raw={score.raw_score:.4f} a={score.attention:.4f}'
        )

    eval_set = test or cval
    metrics = evaluate(
        predict_features(new_global, stack_features(eval_set)),
        stack_targets(eval_set),
        REPORT_THRESHOLDS,
    )
    report = RoundReport(
        round_index=round_index,
        client_scores=tuple(scores),
        global_metrics=metrics,
        simulated_time=time_offset + simulate_time(plan, cfg.unit_client_cost),
        wall_clock=time.perf_counter() - began,
    )
    return new_global, report


def client_distribution(client: ClientDataset) -> TemporalDistribution:
    """Smoothed ground-truth temporal class distribution q_k."""
    return counts_to_distribution(class_counts(client.samples), smooth=True)


def run_experiment(
    cfg: RunConfig,
    tcfg: TrainConfig,
    data: FederatedData,
    *,
    executor=None,
    on_client_update: ClientHook | None = None,
) -> ExperimentResult:
    """
    Run ``cfg.rounds`` rounds on partitioned data.

    Client distributions, the population distribution, the c-validation
    set and the groups are all fixed before the first round.
    """
    if len(data.clients) != cfg.num_clients:
        raise SchedulingError(
            f'RunConfig expects {cfg.num_clients} clients, data has {len(data.clients)}'
        )
    p = population_distribution([(c.n_k, client_distribution(c)) for c in data.clients])
    cval = build_c_validation(data.clients, cfg.cval_fraction, cfg.seed)
    global_params = init_model(data.d_v, data.d_q, tcfg.hidden, tcfg.seed)
    base_plan = make_groups(cfg.num_clients, cfg.num_groups, cfg.seed)
    executor = executor or get_executor()
    logger.info(
        f'Starting {cfg.rounds} rounds: C={cfg.num_clients} G={cfg.num_groups} '
        f'mode={cfg.aggregation_mode.value} c-validation={len(cval)} samples'
    )

    reports = []
    plan = base_plan
    elapsed = 0.0
    for round_index in range(1, cfg.rounds + 1):
        participants = select_participants(
            cfg.num_clients, cfg.participation_fraction, cfg.seed, round_index
        )
        if cfg.regroup_each_round or len(participants) < cfg.num_clients:
            plan = make_groups(
                len(participants),
                min(cfg.num_groups, len(participants)),
                _round_seed(cfg.seed, round_index),
                client_ids=participants,
            )
        global_params, report = run_round(
            global_params, plan, data.clients, p, cval, cfg, tcfg,
            round_index=round_index,
            test=data.test,
            time_offset=elapsed,
            executor=executor,
            on_client_update=on_client_update,
        )
        elapsed = report.simulated_time
        reports.append(report)
        logger.info(
            f'Round {round_index}/{cfg.rounds}: t={elapsed:g} '
            f'R(1,0.5)={report.global_metrics[0.5]:.4f}'
        )
    return ExperimentResult(tuple(reports), global_params, p, plan, len(cval))


def _series(reports: Sequence[RoundReport], m: float) -> list[float]:
    if not reports:
        raise SchedulingError('No round reports given')
    return [report.global_metrics[m] for report in reports]


def rounds_to_convergence(reports: Sequence[RoundReport], m: float) -> int:
    """
    First round whose trailing 3-round moving average of R(1, m) is within
    0.01 of the best moving average of the run. Early rounds average over
    the rounds available so far.
    """
    series = _series(reports, m)
    if len(series) < 3:
        return len(series)
    averages = [
        math.fsum(series[max(0, i - 2):i + 1]) / (i + 1 - max(0, i - 2))
        for i in range(len(series))
    ]
    best = max(averages)
    for i, avg in enumerate(averages):
        if avg >= best - 0.01:
            return i + 1
    return len(series)


def curve_roughness(reports: Sequence[RoundReport], m: float) -> float:
    """Largest absolute round-to-round change of R(1, m)."""
    series = _series(reports, m)
    return max((abs(b - a) for a, b in zip(series, series[1:])), default=0.0)

