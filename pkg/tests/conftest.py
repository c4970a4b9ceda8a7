import os

import hypothesis
import pytest
from hypothesis import HealthCheck

from fedmoment import config
from fedmoment.datagen import (
    FederatedData,
    PartitionConfig,
    generate_corpus,
    partition_dirichlet,
    split_holdout,
)


# reset_config is autouse and function-scoped
_quiet = [HealthCheck.function_scoped_fixture]

hypothesis.settings.register_profile('fedmoment', deadline=None, max_examples=60, suppress_health_check=_quiet)
hypothesis.settings.register_profile('fast', deadline=None, max_examples=10, suppress_health_check=_quiet)
hypothesis.settings.register_profile(
    'debugger', deadline=None, report_multiple_bugs=False, suppress_health_check=_quiet
)
hypothesis.settings.load_profile(os.environ.get('HYPOTHESIS_PROFILE', 'fedmoment'))


@pytest.fixture(autouse=True)
def reset_config():
    yield
    config.clear()


def build_federated_data(n_total=240, num_clients=4, alpha=0.5, seed=11, dim=4, test_fraction=0.25):
    corpus = generate_corpus(n_total, dim, dim, seed)
    train, test = split_holdout(corpus, test_fraction, seed)
    clients = partition_dirichlet(train, PartitionConfig(num_clients, alpha, seed))
    return FederatedData(clients, test, corpus.digest)


@pytest.fixture
def make_data():
    return build_federated_data


@pytest.fixture
def small_data():
    return build_federated_data()
