"""
Freeze-and-relearn probing
Fresh hypothesis-only probes on a frozen encoder, train/probe scenario
matrix, hypothesis-only baselines, hard subsets and task evaluation
"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from sklearn.linear_model import LogisticRegression

from debias import autodiff as ad
from debias import nn
from debias.data import Corpus, Example, bag_of_words, labels_of
from debias.errors import ConfigError, DebiasError, VocabularyError
from debias.nn import HeadKind, HeadSpec, ParameterSet
from debias.seeding import seeded_rng
from debias.train import Checkpoint, TrainConfig, checkpoint_from_training, evaluate_split, train
from utils.json_helper import read_json, write_json

logger = logging.getLogger(__name__)

FEATURE_BATCH = 512


@dataclass
class ProbeReport:
    """Dev accuracies of m relearned probes and their maximum"""

    accuracies: List[float]
    probe_head: HeadSpec
    checkpoint_id: str
    seeds: List[int]
    scenario: Optional[str] = None

    def __post_init__(self):
        if len(self.accuracies) != len(self.seeds) or not self.accuracies:
            raise ConfigError("a probe report needs one accuracy per seed")

    @property
    def max_accuracy(self) -> float:
        return max(self.accuracies)

    @property
    def m(self) -> int:
        return len(self.accuracies)

    def to_dict(self):
        return {
            "checkpoint_id": self.checkpoint_id,
            "spec": self.probe_head.to_dict(),
            "seeds": list(self.seeds),
            "accuracies": list(self.accuracies),
            "max": self.max_accuracy,
            "scenario": self.scenario,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            accuracies=[float(a) for a in data["accuracies"]],
            probe_head=HeadSpec.from_dict(data["spec"]),
            checkpoint_id=data["checkpoint_id"],
            seeds=[int(s) for s in data["seeds"]],
            scenario=data.get("scenario"),
        )

    def save(self, path):
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "ProbeReport":
        return cls.from_dict(read_json(path))


@dataclass(frozen=True)
class ScenarioSpec:
    """Head used by the in-training adversaries and head used by the probes"""

    adversary_head: HeadSpec = nn.LINEAR
    probe_head: HeadSpec = nn.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "adversary_head", HeadSpec.from_dict(self.adversary_head))
        object.__setattr__(self, "probe_head", HeadSpec.from_dict(self.probe_head))

    @property
    def name(self) -> str:
        return f"{self.adversary_head.kind.value}-train/{self.probe_head.kind.value}-probe"


SCENARIOS = tuple(ScenarioSpec(adv, probe) for adv in (nn.LINEAR, nn.MLP3) for probe in (nn.LINEAR, nn.MLP3))


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.1
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    workers: int = 1

    def validate(self) -> "ProbeConfig":
        for name in ("batch_size", "max_epochs", "patience", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"probe {name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ConfigError(f"probe learning_rate must be positive, got {self.learning_rate}")
        return self


def other_head(head: HeadSpec) -> HeadSpec:
    return nn.MLP3 if head.kind is HeadKind.LINEAR else nn.LINEAR


def hypothesis_features(params: ParameterSet, examples: Sequence[Example]) -> np.ndarray:
    """Frozen e_h for every example, shape [N, k]"""
    chunks = []
    for start in range(0, len(examples), FEATURE_BATCH):
        hypotheses = [ex.hypothesis for ex in examples[start : start + FEATURE_BATCH]]
        chunks.append(np.array(nn.encode_batch(params, hypotheses).value))
    return np.concatenate(chunks, axis=0)


def train_probe(
    head: HeadSpec,
    train_x: np.ndarray,
    train_y: np.ndarray,
    dev_x: np.ndarray,
    dev_y: np.ndarray,
    seed: int,
    config: ProbeConfig = ProbeConfig(),
) -> float:
    """
    Train one freshly initialised probe on fixed features

    Returns:
        best dev accuracy reached before early stopping
    """
    k = train_x.shape[1]
    params = nn.init_head(head, k, k, seeded_rng(seed, "probe"), "probe")
    shuffle_rng = seeded_rng(seed, "probe", "shuffle")
    best, stale = -1.0, 0
    for _ in range(config.max_epochs):
        order = shuffle_rng.permutation(len(train_y))
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            params.zero_grad()
            logits = nn.head_logits(params, "probe", head, ad.constant(train_x[rows]))
            ad.backward(ad.mean(ad.softmax_cross_entropy(logits, train_y[rows])))
            for p in params:
                p.assign(p.value - config.learning_rate * p.grad)
        accuracy = float(np.mean(nn.predict(nn.head_logits(params, "probe", head, ad.constant(dev_x))) == dev_y))
        if accuracy > best:
            best, stale = accuracy, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best


def _check_vocab(checkpoint: Checkpoint, corpus: Corpus):
    if corpus.vocab != checkpoint.vocab:
        raise VocabularyError(
            f"corpus {corpus.name} vocabulary ({len(corpus.vocab)} tokens) does not match "
            f"checkpoint vocabulary ({len(checkpoint.vocab)} tokens)"
        )


def relearn_bias(
    checkpoint: Checkpoint,
    corpus: Corpus,
    probe_head: HeadSpec = nn.LINEAR,
    m: int = 20,
    seeds: Optional[Sequence[int]] = None,
    config: ProbeConfig = ProbeConfig(),
    scenario: Optional[str] = None,
) -> ProbeReport:
    """
    Measure the hypothesis-only bias left in a frozen encoder

    Args:
        checkpoint: trained model; only its encoder is used, read-only
        corpus: probes train on its train split and report dev accuracy
        probe_head: probe architecture
        m: number of probes
        seeds: one seed per probe, default 0..m-1

    Returns:
        ProbeReport with per-probe dev accuracies and their maximum

    Raises:
        VocabularyError: corpus and checkpoint vocabularies differ
    """
    if m < 1:
        raise ConfigError(f"need at least one probe, got m={m}")
    seeds = list(range(m)) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != m:
        raise ConfigError(f"expected {m} probe seeds, got {len(seeds)}")
    if not corpus.train or not corpus.dev:
        raise ConfigError("probing needs non-empty train and dev splits")
    config.validate()
    _check_vocab(checkpoint, corpus)

    fingerprint = checkpoint.params.fingerprint()
    encoder = checkpoint.params.subset("encoder.")
    train_x, dev_x = hypothesis_features(encoder, corpus.train), hypothesis_features(encoder, corpus.dev)
    train_y, dev_y = labels_of(corpus.train), labels_of(corpus.dev)

    def run(seed):
        return train_probe(HeadSpec.from_dict(probe_head), train_x, train_y, dev_x, dev_y, seed, config)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        accuracies = list(pool.map(run, seeds))

    if checkpoint.params.fingerprint() != fingerprint:
        raise DebiasError("encoder parameters changed while probing")
    report = ProbeReport(accuracies, HeadSpec.from_dict(probe_head), checkpoint.checkpoint_id, seeds, scenario)
    logger.info(f"Relearned bias ({report.probe_head.kind.value} x{m}): max={report.max_accuracy:.4f}")
    return report


@dataclass
class ScenarioOutcome:
    spec: ScenarioSpec
    primary: ProbeReport
    paired: ProbeReport
    training: Dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scenario": self.spec.name,
            "primary": self.primary.to_dict(),
            "paired": self.paired.to_dict(),
            "training": self.training,
        }


def run_scenario(
    spec: ScenarioSpec,
    corpus: Corpus,
    config: TrainConfig,
    m: int = 20,
    probe_config: ProbeConfig = ProbeConfig(),
) -> ScenarioOutcome:
    """
    Train with the scenario's adversary head and probe with its probe head

    The paired report probes the same frozen encoder with the other head kind.
    """
    config = replace(config, adversary_head=spec.adversary_head)
    params, log = train(corpus, config)
    checkpoint = checkpoint_from_training(params, config, corpus.vocab)
    paired_spec = ScenarioSpec(spec.adversary_head, other_head(spec.probe_head))
    primary = relearn_bias(checkpoint, corpus, spec.probe_head, m, config=probe_config, scenario=spec.name)
    paired = relearn_bias(checkpoint, corpus, paired_spec.probe_head, m, config=probe_config, scenario=paired_spec.name)
    return ScenarioOutcome(spec, primary, paired, log.summary())


def run_scenario_matrix(
    corpus: Corpus,
    config: TrainConfig,
    m: int = 20,
    probe_config: ProbeConfig = ProbeConfig(),
) -> Dict[str, ProbeReport]:
    """All four train/probe combinations, training once per adversary head"""
    reports = {}
    for adversary_head in (nn.LINEAR, nn.MLP3):
        outcome = run_scenario(ScenarioSpec(adversary_head, nn.LINEAR), corpus, config, m, probe_config)
        reports[outcome.primary.scenario] = outcome.primary
        reports[outcome.paired.scenario] = outcome.paired
    return reports


# ---------------------------------------------------------------------------
# hypothesis-only baselines and hard subsets
# ---------------------------------------------------------------------------

class MajorityClassModel:
    """Predicts the most frequent training label (lowest id on ties)"""

    def __init__(self):
        self.label = None

    def fit(self, examples: Sequence[Example]) -> "MajorityClassModel":
        counts = Counter(ex.label for ex in examples)
        self.label = min(counts, key=lambda y: (-counts[y], y))
        return self

    def predict(self, examples: Sequence[Example]) -> np.ndarray:
        return np.full(len(examples), self.label, dtype=np.int64)


class HypothesisOnlyBaseline:
    """Bag-of-words logistic regression over hypothesis tokens"""

    def __init__(self, vocab_size: int, seed: int = 0, max_iter: int = 1000):
        self.vocab_size = vocab_size
        self.model = LogisticRegression(max_iter=max_iter, random_state=seed)

    def fit(self, examples: Sequence[Example]) -> "HypothesisOnlyBaseline":
        self.model.fit(bag_of_words(examples, self.vocab_size), labels_of(examples))
        return self

    def predict(self, examples: Sequence[Example]) -> np.ndarray:
        if not examples:
            return np.zeros(0, dtype=np.int64)
        return self.model.predict(bag_of_words(examples, self.vocab_size)).astype(np.int64)

    def accuracy(self, examples: Sequence[Example]) -> float:
        return float(np.mean(self.predict(examples) == labels_of(examples)))


def hard_subset(corpus: Union[Corpus, Sequence[Example]], hypothesis_only_model, split: str = "test") -> List[Example]:
    """Examples of the split that the hypothesis-only model misclassifies"""
    examples = corpus.split(split) if isinstance(corpus, Corpus) else list(corpus)
    if not examples:
        logger.warning("Hard subset requested for an empty split")
        return []
    wrong = hypothesis_only_model.predict(examples) != labels_of(examples)
    subset = [ex for ex, miss in zip(examples, wrong) if miss]
    if not subset:
        logger.warning("Hard subset is empty: the hypothesis-only model classifies every example correctly")
    else:
        logger.info(f"Hard subset: {len(subset)}/{len(examples)} examples")
    return subset


def evaluate(
    checkpoint: Checkpoint,
    corpus: Union[Corpus, Sequence[Example]],
    split: str = "test",
) -> Optional[float]:
    """
    Premise+hypothesis task accuracy of a checkpoint

    Returns:
        accuracy, or None for an empty example list
    """
    if isinstance(corpus, Corpus):
        _check_vocab(checkpoint, corpus)
        examples = corpus.split(split)
    else:
        examples = list(corpus)
    if not examples:
        logger.warning("Nothing to evaluate: empty example list")
        return None
    task, _, _ = evaluate_split(checkpoint.params, examples, replace(checkpoint.config, adversaries=0, spectators=0))
    return task
