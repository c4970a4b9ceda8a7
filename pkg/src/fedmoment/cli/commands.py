"""
End-to-end pipelines behind the ``run``, ``sweep`` and ``compare`` verbs.

Every command returns an exit status. Component failures are logged and
turned into status 1 unless the DEBUG setting is on, in which case they
propagate.
"""

from __future__ import annotations

import functools
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from fedmoment.config import get as get_config
from fedmoment.datagen import (
    ClientDataset,
    Corpus,
    FederatedData,
    PartitionConfig,
    generate_corpus,
    partition_dirichlet,
    split_holdout,
    uniform_class_mix,
)
from fedmoment.federation import (
    AggregationMode,
    ExperimentResult,
    RunConfig,
    curve_roughness,
    rounds_to_convergence,
    run_experiment,
)
from fedmoment.federation.executors import get_executor
from fedmoment.federation.reports import tradeoff_rows, write_rounds_csv, write_tradeoff_csv
from fedmoment.localizer import TrainConfig
from fedmoment.localizer.codec import parameters_to_bytes
from fedmoment.metrics import REPORT_THRESHOLDS
from fedmoment.cli.spec import ExperimentSpec


logger = logging.getLogger(__name__)

ARMS = ('centralized', 'fedavg', 'fedvmr')
ARM_TITLES = {'centralized': 'Centralized', 'fedavg': 'FedAvg', 'fedvmr': 'FedVMR'}


def command(func):
    """
    Convert component failures into exit status 1.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ValueError, OSError) as error:
            logger.error(f'{func.__name__} failed: {error}')
            if get_config('DEBUG', False):
                raise
            return 1
    return wrapper


@dataclass(frozen=True, eq=False)
class Arm:
    name: str
    run: RunConfig
    train: TrainConfig
    data: FederatedData


def build_data(spec: ExperimentSpec) -> tuple[Corpus, FederatedData]:
    """Generate, hold out a test split and partition across clients."""
    d = spec.data
    corpus = generate_corpus(d.n_total, d.d_v, d.d_q, d.seed, uniform_class_mix())
    train, test = split_holdout(corpus, d.test_fraction, d.seed)
    clients = partition_dirichlet(
        train,
        PartitionConfig(spec.run.num_clients, d.alpha, d.seed, d.label_mode),
    )
    return corpus, FederatedData(clients, test, corpus.digest)


def _metric_key(m: float) -> str:
    return f'R(1,{m})'


def summarize(result: ExperimentResult, run: RunConfig, corpus_digest: str) -> dict:
    final = result.reports[-1]
    return {
        'corpus_digest': corpus_digest,
        'num_clients': run.num_clients,
        'num_groups': run.num_groups,
        'aggregation_mode': run.aggregation_mode.value,
        'rounds': len(result.reports),
        'final_metrics': {_metric_key(m): final.global_metrics[m] for m in REPORT_THRESHOLDS},
        'convergence_m': run.convergence_m,
        'rounds_to_convergence': rounds_to_convergence(result.reports, run.convergence_m),
        'curve_roughness': curve_roughness(result.reports, run.convergence_m),
        'total_simulated_time': final.simulated_time,
        'layout_digest': f'{result.final_model.layout_digest:#018x}',
    }


def write_outputs(directory: Path, result: ExperimentResult, run: RunConfig, corpus_digest: str) -> dict:
    """Write rounds.csv, final_model.bin and summary.json; return the summary."""
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / 'rounds.csv', 'w', newline='') as stream:
        write_rounds_csv(result.reports, run.num_clients, stream)
    (directory / 'final_model.bin').write_bytes(parameters_to_bytes(result.final_model))
    summary = summarize(result, run, corpus_digest)
    (directory / 'summary.json').write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n')
    logger.info(f'Wrote rounds.csv, final_model.bin and summary.json to {directory}')
    return summary


def _run_one(spec: ExperimentSpec, data: FederatedData, run: RunConfig, directory: Path) -> dict:
    result = run_experiment(run, spec.train, data)
    return write_outputs(directory, result, run, data.corpus_digest)


@command
def cmd_run(spec: ExperimentSpec) -> int:
    """Run one experiment, or a sweep when the spec lists one."""
    if spec.sweep:
        return cmd_sweep(spec)
    _, data = build_data(spec)
    _run_one(spec, data, spec.run, spec.outputs)
    return 0


def sweep_values(spec: ExperimentSpec) -> list[int]:
    """
    Group counts to sweep: the spec's list, or powers of two up to C.
    The fully parallel case G = C is always included.
    """
    C = spec.run.num_clients
    if spec.sweep:
        values = set(spec.sweep)
    else:
        values = {2 ** i for i in range(C.bit_length()) if 2 ** i <= C}
    values.add(C)
    return sorted(values)


@command
def cmd_sweep(spec: ExperimentSpec) -> int:
    """
    One experiment per group count, each in its own ``G<n>`` directory,
    plus tradeoff.csv relating rounds to convergence and simulated time.
    """
    _, data = build_data(spec)
    values = sweep_values(spec)
    runs = {G: replace(spec.run, num_groups=G) for G in values}
    summaries = get_executor().run([
        lambda G=G: _run_one(spec, data, runs[G], spec.outputs / f'G{G}')
        for G in values
    ])
    rounds_needed = {G: summary['rounds_to_convergence'] for G, summary in zip(values, summaries)}
    rows = tradeoff_rows(spec.run.num_clients, spec.run.unit_client_cost, rounds_needed, spec.run.seed)
    spec.outputs.mkdir(parents=True, exist_ok=True)
    with open(spec.outputs / 'tradeoff.csv', 'w', newline='') as stream:
        write_tradeoff_csv(rows, stream)
    for row in rows:
        logger.info(
            f'G={row.num_groups}: {row.rounds_needed} rounds, '
            f'time {row.total_time:g}, ratio {row.ratio:.2f}'
        )
    return 0


def centralized_data(data: FederatedData) -> FederatedData:
    """All training samples on a single client; the test split is shared."""
    pooled = sorted((s for c in data.clients for s in c.samples), key=lambda s: s.sample_id)
    return FederatedData((ClientDataset(0, tuple(pooled)),), data.test, data.corpus_digest)


def comparison_arms(spec: ExperimentSpec, data: FederatedData) -> list[Arm]:
    run, train = spec.run, spec.train
    C = run.num_clients
    return [
        Arm(
            'centralized',
            replace(
                run, num_clients=1, num_groups=1, participation_fraction=1.0,
                regroup_each_round=False, aggregation_mode=AggregationMode.UNIFORM,
            ),
            replace(train, lambda_dis=0.0),
            centralized_data(data),
        ),
        Arm(
            'fedavg',
            replace(run, num_groups=C, aggregation_mode=AggregationMode.UNIFORM),
            replace(train, lambda_dis=0.0),
            data,
        ),
        Arm('fedvmr', run, train, data),
    ]


def markdown_table(finals: dict[str, dict[float, float]]) -> str:
    header = '| Metric | ' + ' | '.join(ARM_TITLES[arm] for arm in ARMS) + ' |'
    lines = [header, '|' + '---|' * (len(ARMS) + 1)]
    for m in sorted(REPORT_THRESHOLDS, reverse=True):
        cells = ' | '.join(f'{100.0 * finals[arm][m]:.2f}' for arm in ARMS)
        lines.append(f'| IoU>{m} | {cells} |')
    return '\n'.join(lines) + '\n'


@command
def cmd_compare(spec: ExperimentSpec) -> int:
    """
    Run the centralized, FedAvg and FedVMR arms on the same corpus and
    seeds, each from a freshly initialized model.
    """
    corpus, data = build_data(spec)
    arms = comparison_arms(spec, data)
    results = {arm.name: run_experiment(arm.run, arm.train, arm.data) for arm in arms}

    summaries = {}
    for arm in arms:
        summaries[arm.name] = write_outputs(
            spec.outputs / arm.name, results[arm.name], arm.run, corpus.digest
        )

    with open(spec.outputs / 'compare.csv', 'w', newline='') as stream:
        stream.write('round,arm,' + ','.join(_metric_key(m) for m in REPORT_THRESHOLDS) + '\n')
        rounds = len(results['fedvmr'].reports)
        for index in range(rounds):
            for name in ARMS:
                report = results[name].reports[index]
                values = ','.join(f'{report.global_metrics[m]:.6f}' for m in REPORT_THRESHOLDS)
                stream.write(f'{report.round_index},{name},{values}\n')

    finals = {name: results[name].reports[-1].global_metrics for name in ARMS}
    (spec.outputs / 'summary.md').write_text(markdown_table(finals))
    (spec.outputs / 'summary.json').write_text(
        json.dumps({'corpus_digest': corpus.digest, 'arms': summaries}, indent=2, sort_keys=True) + '\n'
    )
    logger.info(f'Comparison written to {spec.outputs}')
    return 0
