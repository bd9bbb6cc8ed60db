import numpy as np
import pytest
from hypothesis import settings

from kitbench.data import SyntheticConfig, generate_synthetic
from kitbench.kitnet import TrainingConfig, train_online

settings.register_profile("kitbench", deadline=None, max_examples=60)
settings.load_profile("kitbench")

# Desk-scale setup shared by the integration and acceptance tests.
DESK_TRAIN = SyntheticConfig(n_features=20, n_benign=2000, n_malicious=0, seed=0)
DESK_TRAINING = TrainingConfig(fm_window=500, train_window=1500, seed=0)


@pytest.fixture(scope="session")
def desk_train_rows():
    return generate_synthetic(DESK_TRAIN).rows


@pytest.fixture(scope="session")
def desk_model(desk_train_rows):
    return train_online(desk_train_rows, DESK_TRAINING)


@pytest.fixture(scope="session")
def small_model():
    """Four clusters of five features; quick to train."""
    rows = generate_synthetic(SyntheticConfig(n_features=20, n_benign=600, n_malicious=0, seed=4)).rows
    return train_online(rows, TrainingConfig(fm_window=200, train_window=400, max_cluster_size=5, seed=4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the run summary."""
    return request.config.__dict__.setdefault("_kitbench_acceptance", [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_kitbench_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
