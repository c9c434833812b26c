import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from debias.data import SyntheticSpec, generate  # noqa: E402
from debias.nn import HeadKind, HeadSpec  # noqa: E402
from debias.train import TrainConfig  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY_SPEC = SyntheticSpec(vocab_size=40, leak_rate=0.9, premise_length=(3, 6), hypothesis_length=(2, 4), seed=0)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate(TINY_SPEC, {"train": 240, "dev": 90, "test": 90})


@pytest.fixture
def tiny_config():
    return TrainConfig(
        lam=0.5,
        adversaries=2,
        k=8,
        embed_dim=6,
        task_head=HeadSpec(HeadKind.MLP1, hidden=8),
        learning_rate=0.1,
        batch_size=32,
        max_epochs=3,
        patience=2,
        seed=0,
        spectators=2,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
