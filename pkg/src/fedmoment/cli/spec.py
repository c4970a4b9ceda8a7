"""
Experiment spec files.

A spec is a flat text file of ``key = value`` lines with dotted section
prefixes. Blank lines and lines starting with ``#`` are ignored. Example:

    seed = 3
    outputs = runs/g4
    run.num_clients = 16
    run.num_groups = 4
    data.alpha = 0
    sweep = 1, 2, 4, 8, 16

Unknown and duplicate keys are rejected. Everything not given falls back
to the defaults below; component seeds fall back to the top-level seed.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from pathlib import Path

from fedmoment.datagen import LabelMode
from fedmoment.federation import AggregationMode, RunConfig
from fedmoment.localizer import TrainConfig
from fedmoment.metrics import DEFAULT_THRESHOLDS, DEFAULT_WEIGHTS, MetricError, ScoringConfig


class SpecError(ValueError):
    """Raised with every problem found in a spec file."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__('\n'.join(self.diagnostics))


@dataclass(frozen=True)
class DataSpec:
    n_total: int = 2000
    d_v: int = 8
    d_q: int = 8
    alpha: float = 0.0
    label_mode: LabelMode = LabelMode.TEMPORAL_CLASS
    test_fraction: float = 0.2
    cval_fraction: float = 0.01
    seed: int = 0


@dataclass(frozen=True)
class ExperimentSpec:
    data: DataSpec
    train: TrainConfig
    run: RunConfig
    outputs: Path
    sweep: tuple[int, ...] | None = None
    seed: int = 0

    def with_seed(self, seed: int) -> ExperimentSpec:
        """Override the top-level seed and every component seed."""
        return replace(
            self,
            seed=seed,
            data=replace(self.data, seed=seed),
            train=replace(self.train, seed=seed),
            run=replace(self.run, seed=seed),
        )


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(f'not a boolean: {text!r}')


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(token) for token in text.split(','))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(token) for token in text.split(','))


def _choice(enum_cls) -> Callable[[str], str]:
    def parse(text: str):
        return enum_cls(text)
    parse.__name__ = enum_cls.__name__
    return parse


SCHEMA: dict[str, Callable[[str], object]] = {
    'seed': int,
    'outputs': str,
    'sweep': _parse_ints,
    'data.n_total': int,
    'data.d_v': int,
    'data.d_q': int,
    'data.alpha': float,
    'data.label_mode': _choice(LabelMode),
    'data.test_fraction': float,
    'data.cval_fraction': float,
    'data.seed': int,
    'train.local_epochs': int,
    'train.learning_rate': float,
    'train.lambda_dis': float,
    'train.batch_size': int,
    'train.hidden': int,
    'train.seed': int,
    'run.num_clients': int,
    'run.num_groups': int,
    'run.rounds': int,
    'run.participation_fraction': float,
    'run.regroup_each_round': _parse_bool,
    'run.unit_client_cost': float,
    'run.aggregation_mode': _choice(AggregationMode),
    'run.convergence_m': float,
    'run.seed': int,
    'scoring.thresholds': _parse_floats,
    'scoring.weights': _parse_floats,
}

DEFAULTS = {
    'outputs': 'fedmoment-out',
    'run.num_clients': 16,
    'run.num_groups': 1,
    'run.rounds': 20,
}


def _read_pairs(text: str, source: str) -> dict[str, object]:
    values: dict[str, object] = {}
    first_seen: dict[str, int] = {}
    diagnostics = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        where = f'{source}:{lineno}'
        if not sep or not key:
            diagnostics.append(f"{where}: expected 'key = value', got {raw.strip()!r}")
            continue
        if key not in SCHEMA:
            diagnostics.append(f'{where}: unknown key {key!r}')
            continue
        if key in first_seen:
            diagnostics.append(f'{where}: duplicate key {key!r} (first set on line {first_seen[key]})')
            continue
        first_seen[key] = lineno
        try:
            values[key] = SCHEMA[key](value)
        except ValueError as err:
            diagnostics.append(f'{where}: {key}: cannot parse {value!r} ({err})')
    if diagnostics:
        raise SpecError(diagnostics)
    return values


def _semantic_problems(v: dict) -> list[str]:
    problems = []

    def check(ok: bool, key: str, expectation: str):
        if not ok:
            problems.append(f'{key}: must be {expectation}, got {v[key]!r}')

    C = v['run.num_clients']
    check(C >= 1, 'run.num_clients', '>= 1')
    check(1 <= v['run.num_groups'] <= max(C, 1), 'run.num_groups', f'in [1, run.num_clients={C}]')
    check(v['run.rounds'] >= 1, 'run.rounds', '>= 1')
    check(0.0 < v['run.participation_fraction'] <= 1.0, 'run.participation_fraction', 'in (0, 1]')
    cost = v['run.unit_client_cost']
    check(math.isfinite(cost) and cost > 0.0, 'run.unit_client_cost', 'finite and > 0')
    check(0.0 < v['run.convergence_m'] <= 1.0, 'run.convergence_m', 'in (0, 1]')
    check(v['data.d_v'] >= 1, 'data.d_v', '>= 1')
    check(v['data.d_q'] >= 1, 'data.d_q', '>= 1')
    check(math.isfinite(v['data.alpha']) and v['data.alpha'] >= 0.0, 'data.alpha', 'finite and >= 0')
    holdout_ok = 0.0 <= v['data.test_fraction'] < 1.0
    check(holdout_ok, 'data.test_fraction', 'in [0, 1)')
    check(0.0 < v['data.cval_fraction'] <= 1.0, 'data.cval_fraction', 'in (0, 1]')
    if holdout_ok:
        train_size = v['data.n_total'] - int(round(v['data.test_fraction'] * v['data.n_total']))
        check(train_size >= C, 'data.n_total', f'large enough to leave >= {C} training samples')
    check(v['train.local_epochs'] >= 1, 'train.local_epochs', '>= 1')
    for key in ('train.learning_rate', 'train.lambda_dis'):
        check(math.isfinite(v[key]) and v[key] >= 0.0, key, 'finite and >= 0')
    check(v['train.batch_size'] >= 1, 'train.batch_size', '>= 1')
    check(v['train.hidden'] >= 1, 'train.hidden', '>= 1')
    for key in ('seed', 'data.seed', 'train.seed', 'run.seed'):
        check(v[key] >= 0, key, '>= 0')
    if v.get('sweep') is not None:
        bad = [G for G in v['sweep'] if not 1 <= G <= C]
        if bad:
            problems.append(f'sweep: values must lie in [1, run.num_clients={C}], got {bad}')
    try:
        ScoringConfig(v['scoring.thresholds'], v['scoring.weights'])
    except MetricError as err:
        problems.append(f'scoring: {err}')
    return problems


def _with_defaults(values: dict) -> dict:
    data, train, run = DataSpec(), TrainConfig(), RunConfig(
        num_clients=DEFAULTS['run.num_clients'],
        num_groups=DEFAULTS['run.num_groups'],
        rounds=DEFAULTS['run.rounds'],
    )
    filled = {'seed': 0, 'outputs': DEFAULTS['outputs'], 'sweep': None}
    filled.update({f'data.{name}': getattr(data, name) for name in DataSpec.__dataclass_fields__})
    filled.update({f'train.{name}': getattr(train, name) for name in TrainConfig.__dataclass_fields__})
    for name in RunConfig.__dataclass_fields__:
        if f'run.{name}' in SCHEMA:
            filled[f'run.{name}'] = getattr(run, name)
    filled['scoring.thresholds'] = DEFAULT_THRESHOLDS
    filled['scoring.weights'] = DEFAULT_WEIGHTS
    filled.update(values)
    for key in ('data.seed', 'train.seed', 'run.seed'):
        if key not in values:
            filled[key] = filled['seed']
    return filled


def _section(v: dict, prefix: str) -> dict:
    return {key[len(prefix):]: value for key, value in v.items() if key.startswith(prefix)}


def parse_spec_text(text: str, source: str = '<spec>', base_dir: Path | None = None) -> ExperimentSpec:
    v = _with_defaults(_read_pairs(text, source))
    problems = _semantic_problems(v)
    if problems:
        raise SpecError(problems)
    outputs = Path(v['outputs'])
    if base_dir is not None and not outputs.is_absolute():
        outputs = base_dir / outputs
    try:
        scoring = ScoringConfig(v['scoring.thresholds'], v['scoring.weights'])
        data = DataSpec(**_section(v, 'data.'))
        train = TrainConfig(**_section(v, 'train.'))
        run = RunConfig(**_section(v, 'run.'), cval_fraction=data.cval_fraction, scoring=scoring)
    except ValueError as err:
        raise SpecError([f'{source}: {err}']) from err
    return ExperimentSpec(data=data, train=train, run=run, outputs=outputs, sweep=v['sweep'], seed=v['seed'])


def parse_spec(path) -> ExperimentSpec:
    """
    Read and validate a spec file. Relative ``outputs`` paths resolve
    against the spec file's directory.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise SpecError([f'{path}: cannot read spec ({err.strerror or err})']) from err
    return parse_spec_text(text, str(path), base_dir=path.parent)
