"""
End-to-end trends on planted-bias corpora; each test trains several models
"""

import functools
from dataclasses import replace

import numpy as np
import pytest

from debias import nn
from debias.data import SyntheticSpec, generate
from debias.probe import HypothesisOnlyBaseline, ProbeConfig, evaluate, hard_subset, relearn_bias, run_scenario_matrix
from debias.train import TrainConfig, checkpoint_from_training, train

pytestmark = pytest.mark.slow

CORPUS = SyntheticSpec(vocab_size=60, leak_rate=0.9, premise_length=(3, 6), hypothesis_length=(2, 4))
BASE = TrainConfig(lam=0.5, k=64, embed_dim=20, max_epochs=20, patience=5, adversarial_warmup=10, spectators=5)
PROBES = ProbeConfig(max_epochs=30)
SEEDS = (0, 1, 2)
M = 20


@functools.lru_cache(maxsize=None)
def corpus(leak_rate):
    return generate(replace(CORPUS, leak_rate=leak_rate), (3000, 600, 600))


@functools.lru_cache(maxsize=None)
def trained(leak_rate, k, n, seed):
    config = replace(BASE, k=k, adversaries=n, seed=seed)
    params, log = train(corpus(leak_rate), config)
    return checkpoint_from_training(params, config, corpus(leak_rate).vocab), log


def relearned(leak_rate, k, n, head=nn.LINEAR):
    """Seed-mean of the maximum probe accuracy"""
    return float(
        np.mean([relearn_bias(trained(leak_rate, k, n, s)[0], corpus(leak_rate), head, m=M, config=PROBES).max_accuracy for s in SEEDS])
    )


def test_more_adversaries_less_relearned_bias():
    means = {n: relearned(0.9, 64, n) for n in (0, 1, 5, 10)}
    assert means[0] >= 0.90
    assert min(means[5], means[10]) <= means[0] - 0.15
    rises = [later - earlier for earlier, later in zip(list(means.values()), list(means.values())[1:]) if later > earlier]
    assert len(rises) <= 1 and all(r <= 0.02 for r in rises)


def test_wider_encoders_keep_more_bias():
    assert relearned(0.9, 128, 1) >= relearned(0.9, 32, 1) + 0.02


def test_hard_subset_gains_from_adversaries():
    data = corpus(0.8)
    hard = hard_subset(data, HypothesisOnlyBaseline(len(data.vocab)).fit(data.train), "test")
    baseline = [evaluate(trained(0.8, 64, 0, s)[0], hard) for s in SEEDS]
    debiased = [evaluate(trained(0.8, 64, 10, s)[0], hard) for s in SEEDS]
    assert np.mean(debiased) >= np.mean(baseline)


def test_scenario_matrix_direction():
    config = replace(BASE, adversaries=5)
    runs = [run_scenario_matrix(corpus(0.9), replace(config, seed=s), m=M, probe_config=PROBES) for s in SEEDS]

    def mean(name):
        return np.mean([reports[name].max_accuracy for reports in runs])

    assert mean("mlp3-train/mlp3-probe") <= mean("linear-train/mlp3-probe")
    assert mean("linear-train/mlp3-probe") >= mean("linear-train/linear-probe")


def test_single_adversary_lags_spectators():
    below = 0
    for seed in SEEDS:
        _, log = trained(0.9, 64, 1, seed)
        last = log.epochs[-1]
        below += last.adversary_dev_accuracies[0] < last.max_spectator_accuracy
    assert below >= 2
