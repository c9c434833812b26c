import logging
from dataclasses import replace

import numpy as np
import pytest

from debias import nn
from debias.data import SyntheticSpec, Vocabulary, generate, labels_of, leaked_mask, majority_baseline
from debias.errors import ConfigError, VocabularyError
from debias.probe import (
    SCENARIOS,
    HypothesisOnlyBaseline,
    MajorityClassModel,
    ProbeConfig,
    ProbeReport,
    evaluate,
    hard_subset,
    other_head,
    relearn_bias,
    run_scenario_matrix,
)
from debias.train import checkpoint_from_training, train

QUICK = ProbeConfig(max_epochs=3, patience=2)


@pytest.fixture
def checkpoint(tiny_corpus, tiny_config):
    params = nn.init_params(tiny_config.model_spec(len(tiny_corpus.vocab)), 0)
    return checkpoint_from_training(params, tiny_config, tiny_corpus.vocab)


class PerfectModel:
    def predict(self, examples):
        return labels_of(examples)


class TestRelearn:
    def test_report(self, checkpoint, tiny_corpus):
        report = relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=3, config=QUICK)
        assert report.m == 3
        assert report.seeds == [0, 1, 2]
        assert report.max_accuracy == max(report.accuracies)
        assert all(0.0 <= a <= 1.0 for a in report.accuracies)
        assert report.checkpoint_id == checkpoint.checkpoint_id

    def test_deterministic_and_thread_safe(self, checkpoint, tiny_corpus):
        serial = relearn_bias(checkpoint, tiny_corpus, nn.MLP3, m=3, config=QUICK)
        threaded = relearn_bias(checkpoint, tiny_corpus, nn.MLP3, m=3, config=replace(QUICK, workers=3))
        assert serial.accuracies == threaded.accuracies

    def test_encoder_untouched(self, checkpoint, tiny_corpus):
        before = checkpoint.params.fingerprint()
        relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=2, config=QUICK)
        assert checkpoint.params.fingerprint() == before

    def test_custom_seeds(self, checkpoint, tiny_corpus):
        report = relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=2, seeds=[7, 9], config=QUICK)
        assert report.seeds == [7, 9]
        with pytest.raises(ConfigError):
            relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=2, seeds=[7], config=QUICK)

    def test_premises_do_not_matter(self, checkpoint, tiny_corpus):
        rng = np.random.default_rng(0)

        def shuffled(examples):
            premises = [examples[i].premise for i in rng.permutation(len(examples))]
            return [replace(ex, premise=p) for ex, p in zip(examples, premises)]

        permuted = replace(tiny_corpus, train=shuffled(tiny_corpus.train), dev=shuffled(tiny_corpus.dev))
        original = relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=2, config=QUICK)
        assert relearn_bias(checkpoint, permuted, nn.LINEAR, m=2, config=QUICK) == original

    def test_max_grows_with_m(self, checkpoint, tiny_corpus):
        reports = [relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=m, config=QUICK) for m in range(1, 6)]
        for smaller, larger in zip(reports, reports[1:]):
            assert larger.accuracies[: smaller.m] == smaller.accuracies
            assert larger.max_accuracy >= smaller.max_accuracy

    def test_invalid_arguments(self, checkpoint, tiny_corpus):
        with pytest.raises(ConfigError):
            relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=0)
        with pytest.raises(ConfigError):
            relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=1, config=ProbeConfig(workers=0))

    def test_vocabulary_mismatch(self, checkpoint, tiny_corpus):
        other = replace(tiny_corpus, vocab=Vocabulary(tiny_corpus.vocab.tokens[:-1]))
        with pytest.raises(VocabularyError):
            relearn_bias(checkpoint, other, nn.LINEAR, m=1, config=QUICK)

    def test_report_file(self, checkpoint, tiny_corpus, tmp_path):
        report = relearn_bias(checkpoint, tiny_corpus, nn.LINEAR, m=2, config=QUICK, scenario="linear-train/linear-probe")
        path = report.save(tmp_path / "probe.json")
        loaded = ProbeReport.load(path)
        assert loaded == report
        assert set(report.to_dict()) == {"checkpoint_id", "spec", "seeds", "accuracies", "max", "scenario"}

    def test_report_needs_values(self):
        with pytest.raises(ConfigError):
            ProbeReport([], nn.LINEAR, "id", [])


class TestScenarios:
    def test_four_distinct_scenarios(self):
        assert len({s.name for s in SCENARIOS}) == 4
        assert other_head(nn.LINEAR) == nn.MLP3
        assert other_head(nn.MLP3) == nn.LINEAR

    def test_matrix(self, tiny_corpus, tiny_config):
        config = replace(tiny_config, max_epochs=1, spectators=0)
        reports = run_scenario_matrix(tiny_corpus, config, m=2, probe_config=ProbeConfig(max_epochs=1))
        assert sorted(reports) == sorted(s.name for s in SCENARIOS)
        assert all(r.m == 2 and r.scenario == name for name, r in reports.items())
        # paired probes share the frozen encoder of their training run
        assert reports["linear-train/linear-probe"].checkpoint_id == reports["linear-train/mlp3-probe"].checkpoint_id
        assert reports["linear-train/linear-probe"].checkpoint_id != reports["mlp3-train/linear-probe"].checkpoint_id


class TestBaselines:
    def test_majority_model_breaks_ties_low(self, tiny_corpus):
        first_neutral = next(ex for ex in tiny_corpus.train if ex.label == 2)
        first_contradiction = next(ex for ex in tiny_corpus.train if ex.label == 1)
        model = MajorityClassModel().fit([first_neutral, first_contradiction])
        assert model.label == 1
        assert list(model.predict(tiny_corpus.dev[:3])) == [1, 1, 1]

    def test_bow_learns_the_leak(self, tiny_corpus):
        baseline = HypothesisOnlyBaseline(len(tiny_corpus.vocab)).fit(tiny_corpus.train)
        assert baseline.accuracy(tiny_corpus.test) > majority_baseline(tiny_corpus.test) + 0.2

    def test_hard_subset(self, tiny_corpus):
        model = MajorityClassModel().fit(tiny_corpus.train)
        subset = hard_subset(tiny_corpus, model, "test")
        assert len(subset) == sum(ex.label != model.label for ex in tiny_corpus.test)
        assert all(ex.label != model.label for ex in subset)

    def test_hard_subset_holds_the_unleaked(self):
        corpus = generate(SyntheticSpec(vocab_size=40, leak_rate=0.8, premise_length=(3, 6), hypothesis_length=(2, 4), seed=3), (2000, 0, 1000))
        baseline = HypothesisOnlyBaseline(len(corpus.vocab)).fit(corpus.train)
        subset = hard_subset(corpus, baseline, "test")
        assert leaked_mask(corpus.test, corpus.vocab).mean() > 0.8
        assert leaked_mask(subset, corpus.vocab).mean() < 0.5

    def test_empty_hard_subset_warns(self, tiny_corpus, caplog):
        with caplog.at_level(logging.WARNING):
            assert hard_subset(tiny_corpus, PerfectModel(), "dev") == []
        assert "empty" in caplog.text


class TestEvaluate:
    def test_matches_training_log(self, tiny_corpus, tiny_config):
        params, log = train(tiny_corpus, replace(tiny_config, max_epochs=2))
        checkpoint = checkpoint_from_training(params, tiny_config, tiny_corpus.vocab)
        assert evaluate(checkpoint, tiny_corpus, "dev") == log.final_dev_accuracy

    def test_empty(self, checkpoint):
        assert evaluate(checkpoint, []) is None

    def test_example_list(self, checkpoint, tiny_corpus):
        assert evaluate(checkpoint, tiny_corpus.test) == evaluate(checkpoint, tiny_corpus, "test")
