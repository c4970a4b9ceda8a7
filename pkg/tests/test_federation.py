from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedmoment.datagen import build_c_validation
from fedmoment.federation import (
    AggregationError,
    AggregationMode,
    GroupPlan,
    RoundReport,
    RunConfig,
    SchedulingError,
    aggregate,
    client_distribution,
    client_seed,
    curve_roughness,
    make_groups,
    rounds_to_convergence,
    run_experiment,
    run_round,
    select_participants,
    simulate_time,
)
from fedmoment.federation.executors import get_executor
from fedmoment.localizer import ModelLayout, ParameterVector, TrainConfig, client_update, init_model
from fedmoment.metrics import ClientScore, attention_weights, is_normalized, uniform_weights
from fedmoment.temporal import population_distribution


QUICK = TrainConfig(local_epochs=1, batch_size=16, hidden=6, seed=3)


def _round_inputs(data, cfg, tcfg=QUICK):
    p = population_distribution([(c.n_k, client_distribution(c)) for c in data.clients])
    cval = build_c_validation(data.clients, cfg.cval_fraction, cfg.seed)
    params = init_model(data.d_v, data.d_q, tcfg.hidden, tcfg.seed)
    return p, cval, params


def _report(index, value):
    return RoundReport(index, (), {0.5: value}, float(index))


def test_make_groups_examples():
    (whole,) = make_groups(16, 1, seed=0).groups
    assert sorted(whole) == list(range(16))
    singletons = make_groups(16, 16, seed=0).groups
    assert sorted(len(g) for g in singletons) == [1] * 16
    assert [len(g) for g in make_groups(5, 2, seed=0).groups] == [3, 2]


def test_make_groups_is_seeded():
    assert make_groups(10, 3, seed=4) == make_groups(10, 3, seed=4)
    assert make_groups(10, 3, seed=4).clients == list(range(10))


@pytest.mark.parametrize('C, G', [(4, 0), (4, 5)])
def test_make_groups_rejects_bad_counts(C, G):
    with pytest.raises(SchedulingError):
        make_groups(C, G, seed=0)


@given(st.integers(min_value=1, max_value=40), st.data())
def test_groups_partition_clients_evenly(C, data):
    G = data.draw(st.integers(min_value=1, max_value=C))
    plan = make_groups(C, G, seed=data.draw(st.integers(min_value=0, max_value=1000)))
    sizes = [len(g) for g in plan.groups]
    assert len(sizes) == G
    assert max(sizes) - min(sizes) <= 1
    assert plan.clients == list(range(C))


def test_group_plan_validation():
    with pytest.raises(SchedulingError):
        GroupPlan(((0, 1), (1, 2)))
    with pytest.raises(SchedulingError):
        GroupPlan(((0, 1, 2), (3,)))
    with pytest.raises(SchedulingError):
        GroupPlan(((0,), ()))


def test_simulated_time_examples():
    assert simulate_time(make_groups(16, 1, seed=0), 1.0) == 16.0
    assert simulate_time(make_groups(16, 16, seed=0), 1.0) == 1.0
    assert simulate_time(make_groups(5, 2, seed=0), 2.5) == 7.5
    with pytest.raises(SchedulingError):
        simulate_time(make_groups(4, 2, seed=0), 0.0)


def test_simulated_time_never_grows_with_more_groups():
    times = [simulate_time(make_groups(16, G, seed=1), 1.0) for G in range(1, 17)]
    assert times == sorted(times, reverse=True)


def test_select_participants():
    assert select_participants(8, 1.0, seed=0, round_index=1) == list(range(8))
    chosen = select_participants(8, 0.5, seed=0, round_index=1)
    assert len(chosen) == 4
    assert chosen == sorted(set(chosen))
    assert chosen == select_participants(8, 0.5, seed=0, round_index=1)
    assert len(select_participants(8, 0.01, seed=0, round_index=1)) == 1


def test_client_seed_depends_on_every_input():
    base = client_seed(0, 0, 1, 0)
    assert base == client_seed(0, 0, 1, 0)
    assert len({base, client_seed(1, 0, 1, 0), client_seed(0, 1, 1, 0),
                client_seed(0, 0, 2, 0), client_seed(0, 0, 1, 1)}) == 5


def test_run_config_validation():
    with pytest.raises(SchedulingError):
        RunConfig(num_clients=4, num_groups=0, rounds=1)
    with pytest.raises(SchedulingError):
        RunConfig(num_clients=4, num_groups=5, rounds=1)
    with pytest.raises(SchedulingError):
        RunConfig(num_clients=4, num_groups=2, rounds=0)
    with pytest.raises(SchedulingError):
        RunConfig(num_clients=4, num_groups=2, rounds=1, participation_fraction=0.0)


def _vector(values):
    return ParameterVector(np.asarray(values, dtype=np.float64), ModelLayout(1, 1, 1))


def _filled(value):
    return _vector(np.full(ModelLayout(1, 1, 1).size, value))


def test_aggregate_examples():
    snapshots = [(0, _filled(1.0)), (1, _filled(3.0))]
    mean = aggregate(snapshots, uniform_weights([(0, 0.0), (1, 0.0)]))
    assert np.allclose(mean.values, 2.0)
    assert aggregate(snapshots, [ClientScore(0, 0.0, 1.0), ClientScore(1, 0.0, 0.0)]) == _filled(1.0)
    skewed = aggregate([(0, _filled(0.0)), (1, _filled(4.0))], [ClientScore(0, 0.0, 0.75), ClientScore(1, 0.0, 0.25)])
    assert np.array_equal(skewed.values, np.full(len(skewed), 1.0))
    assert aggregate([(5, _filled(1.5))], [ClientScore(5, 0.2, 1.0)]) == _filled(1.5)


def test_aggregate_rejects_inconsistent_inputs():
    snapshots = [(0, _filled(1.0)), (1, _filled(3.0))]
    with pytest.raises(AggregationError):
        aggregate(snapshots, [ClientScore(0, 0.0, 0.5), ClientScore(1, 0.0, 0.6)])
    with pytest.raises(AggregationError):
        aggregate(snapshots, [ClientScore(0, 0.0, 1.0)])
    other = ParameterVector(np.zeros(ModelLayout(2, 1, 1).size), ModelLayout(2, 1, 1))
    with pytest.raises(AggregationError):
        aggregate([(0, _filled(1.0)), (1, other)], uniform_weights([(0, 0.0), (1, 0.0)]))


@given(st.lists(st.floats(min_value=-10.0, max_value=10.0), min_size=1, max_size=8), st.data())
def test_aggregate_stays_within_envelope(levels, data):
    raw = data.draw(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=len(levels), max_size=len(levels)))
    weights = attention_weights(list(enumerate(raw)))
    snapshots = [(k, _filled(level)) for k, level in enumerate(levels)]
    combined = aggregate(snapshots, weights)
    assert np.all(combined.values >= min(levels) - 1e-9)
    assert np.all(combined.values <= max(levels) + 1e-9)


def test_uniform_parallel_round_is_federated_averaging(make_data):
    data = make_data(n_total=200, num_clients=5, alpha=0.3, seed=2)
    cfg = RunConfig(num_clients=5, num_groups=5, rounds=1, aggregation_mode=AggregationMode.UNIFORM, seed=8)
    p, cval, params = _round_inputs(data, cfg)
    new_global, report = run_round(
        params, make_groups(5, 5, cfg.seed), data.clients, p, cval, cfg, QUICK,
        executor=get_executor('serial'),
    )

    expected = np.zeros(params.layout.size)
    for client in data.clients:
        seed = client_seed(cfg.seed, QUICK.seed, 1, client.client_id)
        trained = client_update(params, client, p, replace(QUICK, seed=seed))
        expected = expected + (1.0 / 5) * trained.values
    assert np.array_equal(new_global.values, expected)
    assert [s.attention for s in report.client_scores] == [0.2] * 5


def test_federated_averaging_trajectory(make_data):
    data = make_data(n_total=240, num_clients=8, alpha=0.5, seed=5)
    cfg = RunConfig(num_clients=8, num_groups=8, rounds=5, aggregation_mode=AggregationMode.UNIFORM, seed=1)
    tcfg = replace(QUICK, local_epochs=2)
    result = run_experiment(cfg, tcfg, data, executor=get_executor('serial'))

    p, _, current = _round_inputs(data, cfg, tcfg)
    for round_index in range(1, 6):
        acc = np.zeros(current.layout.size)
        for client in data.clients:
            seed = client_seed(cfg.seed, tcfg.seed, round_index, client.client_id)
            acc = acc + (1.0 / 8) * client_update(current, client, p, replace(tcfg, seed=seed)).values
        current = ParameterVector(acc, current.layout)
    assert np.array_equal(result.final_model.values, current.values)


def test_single_client_is_plain_training(make_data):
    data = make_data(n_total=80, num_clients=1, seed=3)
    cfg = RunConfig(num_clients=1, num_groups=1, rounds=3, seed=2)
    result = run_experiment(cfg, QUICK, data, executor=get_executor('serial'))

    p, _, current = _round_inputs(data, cfg)
    (client,) = data.clients
    for round_index in range(1, 4):
        seed = client_seed(cfg.seed, QUICK.seed, round_index, 0)
        current = client_update(current, client, p, replace(QUICK, seed=seed))
    assert result.final_model == current
    assert all(report.client_scores[0].attention == 1.0 for report in result.reports)


def test_round_snapshots_and_handoff(make_data):
    data = make_data(n_total=240, num_clients=6, seed=4)
    cfg = RunConfig(num_clients=6, num_groups=2, rounds=1, seed=6)
    p, cval, params = _round_inputs(data, cfg)
    plan = make_groups(6, 2, cfg.seed)
    seen = {}

    def hook(round_index, client_id, init, snapshot):
        seen[client_id] = (init, snapshot)

    _, report = run_round(params, plan, data.clients, p, cval, cfg, QUICK, on_client_update=hook)
    assert sorted(seen) == list(range(6))
    assert [s.client_id for s in report.client_scores] == list(range(6))
    assert is_normalized(report.client_scores)
    for group in plan.groups:
        assert seen[group[0]][0] is params
        for previous, current in zip(group, group[1:]):
            assert seen[current][0] is seen[previous][1]


def test_zero_learning_rate_is_a_fixed_point(make_data):
    data = make_data(n_total=100, num_clients=2, seed=9)
    cfg = RunConfig(num_clients=2, num_groups=1, rounds=1, seed=1)
    frozen = replace(QUICK, learning_rate=0.0)
    p, cval, params = _round_inputs(data, cfg, frozen)
    new_global, report = run_round(params, make_groups(2, 1, cfg.seed), data.clients, p, cval, cfg, frozen)
    assert new_global == params
    assert [s.attention for s in report.client_scores] == [0.5, 0.5]


@pytest.mark.parametrize('trial', range(20))
def test_executors_agree(make_data, trial):
    rng = np.random.default_rng(trial)
    C = int(rng.integers(2, 7))
    G = int(rng.integers(1, C + 1))
    data = make_data(n_total=30 * C, num_clients=C, alpha=float(rng.uniform(0.1, 2.0)), seed=trial)
    cfg = RunConfig(num_clients=C, num_groups=G, rounds=1, seed=trial)
    p, cval, params = _round_inputs(data, cfg)
    plan = make_groups(C, G, cfg.seed)
    serial = run_round(params, plan, data.clients, p, cval, cfg, QUICK, executor=get_executor('serial'))
    threaded = run_round(
        params, plan, data.clients, p, cval, cfg, QUICK, executor=get_executor('threaded', max_workers=4)
    )
    assert serial[0] == threaded[0]
    assert serial[1] == threaded[1]


def test_round_rejects_unknown_clients(small_data):
    cfg = RunConfig(num_clients=5, num_groups=1, rounds=1)
    p, cval, params = _round_inputs(small_data, replace(cfg, num_clients=4))
    with pytest.raises(SchedulingError):
        run_round(params, make_groups(5, 1, 0), small_data.clients, p, cval, cfg, QUICK)


def test_experiment_is_deterministic(small_data):
    cfg = RunConfig(num_clients=4, num_groups=2, rounds=3, seed=7)
    first = run_experiment(cfg, QUICK, small_data)
    second = run_experiment(cfg, QUICK, small_data, executor=get_executor('serial'))
    assert first.final_model == second.final_model
    assert first.reports == second.reports
    assert [r.round_index for r in first.reports] == [1, 2, 3]
    assert [r.simulated_time for r in first.reports] == [2.0, 4.0, 6.0]
    assert first.cval_size == 4


def test_experiment_checks_client_count(small_data):
    with pytest.raises(SchedulingError):
        run_experiment(RunConfig(num_clients=3, num_groups=1, rounds=1), QUICK, small_data)


def test_partial_participation(small_data):
    cfg = RunConfig(num_clients=4, num_groups=2, rounds=3, participation_fraction=0.5, seed=3)
    result = run_experiment(cfg, QUICK, small_data, executor=get_executor('serial'))
    for report in result.reports:
        assert len(report.client_scores) == 2
        assert is_normalized(report.client_scores)
        absent = set(range(4)) - {s.client_id for s in report.client_scores}
        assert all(report.attention(k) == 0.0 for k in absent)


def test_regrouping_trains_everyone_each_round(small_data):
    cfg = RunConfig(num_clients=4, num_groups=2, rounds=3, regroup_each_round=True, seed=3)
    trained = []
    run_experiment(
        cfg, QUICK, small_data, executor=get_executor('serial'),
        on_client_update=lambda r, cid, init, snapshot: trained.append((r, cid)),
    )
    for round_index in (1, 2, 3):
        assert sorted(cid for r, cid in trained if r == round_index) == [0, 1, 2, 3]


def test_rounds_to_convergence_example():
    series = [0.1, 0.2, 0.3, 0.4, 0.89, 0.895] + [0.9] * 14
    reports = [_report(i + 1, v) for i, v in enumerate(series)]
    assert rounds_to_convergence(reports, 0.5) == 7


def test_rounds_to_convergence_short_and_flat_runs():
    assert rounds_to_convergence([_report(1, 0.3), _report(2, 0.1)], 0.5) == 2
    assert rounds_to_convergence([_report(i, 0.4) for i in range(1, 6)], 0.5) == 1
    assert rounds_to_convergence([_report(i, 1.0 - 0.1 * i) for i in range(1, 8)], 0.5) == 1
    with pytest.raises(SchedulingError):
        rounds_to_convergence([], 0.5)


def test_curve_roughness():
    reports = [_report(1, 0.2), _report(2, 0.5), _report(3, 0.45)]
    assert curve_roughness(reports, 0.5) == pytest.approx(0.3)
    assert curve_roughness(reports[:1], 0.5) == 0.0


def test_report_equality_ignores_wall_clock():
    scores = (ClientScore(0, 0.5, 1.0),)
    assert RoundReport(1, scores, {0.5: 0.2}, 1.0, wall_clock=0.1) == RoundReport(1, scores, {0.5: 0.2}, 1.0, wall_clock=9.0)
