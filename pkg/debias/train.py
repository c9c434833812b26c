"""
Minimax trainer
Joint gradient descent-ascent over the task head, the shared encoder and an
ensemble of hypothesis-only adversaries, plus checkpoint persistence
"""

import hashlib
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from debias import autodiff as ad
from debias import nn
from debias.data import Corpus, Example, Vocabulary, labels_of
from debias.errors import CheckpointError, ConfigError, DebiasError, DivergenceError, NonFiniteError, ObjectiveError, ShapeError
from debias.nn import EncoderKind, HeadKind, HeadSpec, ModelSpec, ParameterSet
from debias.seeding import seeded_rng
from utils.json_helper import dumps, safe_json_loads

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"AEDB"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sHI")
EVAL_BATCH = 512


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one minimax training run"""

    lam: float = 0.5
    adversaries: int = 0
    k: int = 64
    embed_dim: int = nn.DEFAULT_EMBED_DIM
    encoder: EncoderKind = EncoderKind.MEAN_POOL
    task_head: HeadSpec = field(default_factory=lambda: HeadSpec(HeadKind.MLP1))
    adversary_head: HeadSpec = nn.LINEAR
    learning_rate: float = 0.1
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    spectators: int = 20
    # adversarial runs train at least this many epochs before early stopping or best-epoch selection
    adversarial_warmup: int = 10

    def __post_init__(self):
        object.__setattr__(self, "encoder", EncoderKind(self.encoder))
        object.__setattr__(self, "task_head", HeadSpec.from_dict(self.task_head))
        object.__setattr__(self, "adversary_head", HeadSpec.from_dict(self.adversary_head))

    def issues(self) -> List[str]:
        issues = []
        if not 0.0 <= self.lam <= 1.0:
            issues.append(f"lambda must lie in [0, 1], got {self.lam}")
        if self.adversaries < 0:
            issues.append(f"adversaries must be >= 0, got {self.adversaries}")
        if self.adversarial_warmup < 0:
            issues.append(f"adversarial_warmup must be >= 0, got {self.adversarial_warmup}")
        if self.spectators < 0:
            issues.append(f"spectators must be >= 0, got {self.spectators}")
        for name in ("k", "embed_dim", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                issues.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            issues.append(f"learning_rate must be positive, got {self.learning_rate}")
        return issues

    def validate(self) -> "TrainConfig":
        issues = self.issues()
        if issues:
            raise ConfigError("; ".join(issues))
        return self

    @property
    def effective_lambda(self) -> float:
        """λ actually applied; with no adversaries only the task loss remains"""
        return self.lam if self.adversaries > 0 else 0.0

    @property
    def warmup_epochs(self) -> int:
        """First epoch eligible as best epoch; 0 when every epoch is"""
        return min(self.adversarial_warmup, self.max_epochs) if self.effective_lambda > 0 else 0

    def model_spec(self, vocab_size: int) -> ModelSpec:
        return ModelSpec(
            vocab_size=vocab_size,
            k=self.k,
            embed_dim=self.embed_dim,
            encoder=self.encoder,
            task_head=self.task_head,
            adversary_head=self.adversary_head,
            adversaries=self.adversaries,
        )

    def to_dict(self):
        data = asdict(self)
        data["lambda"] = data.pop("lam")
        data["encoder"] = self.encoder.value
        data["task_head"] = self.task_head.to_dict()
        data["adversary_head"] = self.adversary_head.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        return cls(**data)


@dataclass
class Batch:
    premises: List[Tuple[int, ...]]
    hypotheses: List[Tuple[int, ...]]
    labels: np.ndarray

    @classmethod
    def of(cls, examples: Sequence[Example]) -> "Batch":
        return cls([ex.premise for ex in examples], [ex.hypothesis for ex in examples], labels_of(examples))

    def __len__(self):
        return len(self.labels)


@dataclass
class ForwardPass:
    loss: ad.Node
    e_h: ad.Node
    task_logits: ad.Node
    adversary_logits: List[ad.Node]


def forward(
    params: ParameterSet,
    batch: Batch,
    lam: float,
    n: int,
    task_head: HeadSpec,
    adversary_head: HeadSpec,
) -> ForwardPass:
    """Build the minibatch graph of the minimax objective"""
    if not 0.0 <= lam <= 1.0:
        raise ObjectiveError(f"lambda must lie in [0, 1], got {lam}")
    if n < 0 or (n == 0 and lam > 0):
        raise ObjectiveError(f"adversarial term with lambda={lam} needs at least one adversary, got n={n}")

    e_h = nn.encode_batch(params, batch.hypotheses)
    e_p = nn.encode_batch(params, batch.premises)
    task_logits = nn.task_logits(params, task_head, nn.combine(e_h, e_p))
    task_loss = ad.mean(ad.softmax_cross_entropy(task_logits, batch.labels))
    if lam == 0.0:
        return ForwardPass(task_loss, e_h, task_logits, [])

    reversed_h = ad.grad_reverse(e_h, ad.ReversalCoefficient(1.0))
    adversary_logits = [nn.adversary_logits(params, i, adversary_head, reversed_h) for i in range(n)]
    adversary_losses = [ad.softmax_cross_entropy(logits, batch.labels) for logits in adversary_logits]
    total = adversary_losses[0]
    for term in adversary_losses[1:]:
        total = ad.add(total, term)
    loss = ad.add(ad.scale(task_loss, 1.0 - lam), ad.scale(ad.mean(total), lam / n))
    return ForwardPass(loss, e_h, task_logits, adversary_logits)


def minimax_loss(
    params: ParameterSet,
    batch: Batch,
    lam: float,
    n: int,
    task_head: HeadSpec = HeadSpec(HeadKind.MLP1),
    adversary_head: HeadSpec = nn.LINEAR,
) -> ad.Node:
    """
    Batch-averaged (1−λ)·CE(task) + (λ/n)·Σ_i CE(adversary_i)

    Each adversary reads the hypothesis representation through a gradient
    reversal node, so one descent step trains the adversaries on their own
    cross-entropy while the encoder receives the negated, (λ/n)-scaled
    adversary gradient.

    Raises:
        ObjectiveError: n = 0 with λ > 0, or λ outside [0, 1]
    """
    return forward(params, batch, lam, n, task_head, adversary_head).loss


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    task_dev_accuracy: float
    adversary_dev_accuracies: List[float]
    spectator_dev_accuracies: List[float]

    @property
    def max_spectator_accuracy(self) -> Optional[float]:
        return max(self.spectator_dev_accuracies) if self.spectator_dev_accuracies else None

    @property
    def max_bias_accuracy(self) -> Optional[float]:
        """Highest hypothesis-only dev accuracy seen during training"""
        monitored = self.adversary_dev_accuracies + self.spectator_dev_accuracies
        return max(monitored) if monitored else None

    def to_dict(self):
        data = asdict(self)
        data["max_bias_accuracy"] = self.max_bias_accuracy
        return data


@dataclass
class TrainingLog:
    config: Dict
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    final_dev_accuracy: float = 0.0
    stopped_early: bool = False

    @property
    def best(self) -> Optional[EpochRecord]:
        for record in self.epochs:
            if record.epoch == self.best_epoch:
                return record
        return None

    def summary(self) -> Dict:
        best = self.best
        return {
            "epochs_run": len(self.epochs),
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "final_dev_accuracy": self.final_dev_accuracy,
            "adversary_dev_accuracies": best.adversary_dev_accuracies if best else [],
            "max_spectator_accuracy": best.max_spectator_accuracy if best else None,
            "during_training_bias": best.max_bias_accuracy if best else None,
        }

    def to_dict(self):
        return {
            "config": self.config,
            "epochs": [r.to_dict() for r in self.epochs],
            "summary": self.summary(),
        }


def init_spectators(config: TrainConfig) -> ParameterSet:
    spectators = ParameterSet()
    for j in range(config.spectators):
        rng = seeded_rng(config.seed, "spectator", j)
        spectators.merge(nn.init_head(config.adversary_head, config.k, config.k, rng, f"spectator.{j}"))
    return spectators


def _sgd(params: ParameterSet, learning_rate: float):
    for p in params:
        p.assign(p.value - learning_rate * p.grad)


def _spectator_step(spectators: ParameterSet, e_h: np.ndarray, labels: np.ndarray, config: TrainConfig):
    """Spectators see a detached copy of e_h and never touch the encoder"""
    if len(spectators) == 0:
        return
    spectators.zero_grad()
    frozen = ad.constant(e_h)
    total = None
    for j in range(config.spectators):
        logits = nn.head_logits(spectators, f"spectator.{j}", config.adversary_head, frozen)
        term = ad.mean(ad.softmax_cross_entropy(logits, labels))
        total = term if total is None else ad.add(total, term)
    ad.backward(total)
    _sgd(spectators, config.learning_rate)


def _accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predictions == labels)) if len(labels) else 0.0


def evaluate_split(
    params: ParameterSet,
    examples: Sequence[Example],
    config: TrainConfig,
    spectators: Optional[ParameterSet] = None,
) -> Tuple[float, List[float], List[float]]:
    """Task, per-adversary and per-spectator accuracy on a split"""
    labels = labels_of(examples)
    task_pred, adv_pred, spec_pred = [], [], []
    n_spectators = config.spectators if spectators is not None and len(spectators) else 0
    for start in range(0, len(examples), EVAL_BATCH):
        batch = Batch.of(examples[start : start + EVAL_BATCH])
        e_h = nn.encode_batch(params, batch.hypotheses)
        e_p = nn.encode_batch(params, batch.premises)
        task_pred.append(nn.predict(nn.task_logits(params, config.task_head, nn.combine(e_h, e_p))))
        adv_pred.append(
            [nn.predict(nn.adversary_logits(params, i, config.adversary_head, e_h)) for i in range(config.adversaries)]
        )
        spec_pred.append(
            [
                nn.predict(nn.head_logits(spectators, f"spectator.{j}", config.adversary_head, e_h))
                for j in range(n_spectators)
            ]
        )
    task = _accuracy(np.concatenate(task_pred), labels)
    adversaries = [_accuracy(np.concatenate([b[i] for b in adv_pred]), labels) for i in range(config.adversaries)]
    spectator = [_accuracy(np.concatenate([b[j] for b in spec_pred]), labels) for j in range(n_spectators)]
    return task, adversaries, spectator


def train(
    corpus: Corpus,
    config: TrainConfig,
    embeddings: Optional[np.ndarray] = None,
    progress: bool = False,
) -> Tuple[ParameterSet, TrainingLog]:
    """
    Train encoder, task head and adversaries with the minimax objective

    Args:
        corpus: corpus with non-empty train and dev splits
        config: training hyperparameters
        embeddings: optional [V, embed_dim] table replacing the initial embeddings
        progress: show a tqdm bar over epochs

    Returns:
        (parameters of the best dev epoch, training log)

    Raises:
        DivergenceError: a loss or parameter became non-finite
    """
    config.validate()
    if not corpus.train or not corpus.dev:
        raise ConfigError("training needs non-empty train and dev splits")
    params = nn.init_params(config.model_spec(len(corpus.vocab)), config.seed)
    if embeddings is not None:
        if embeddings.shape != params["encoder.embedding"].shape:
            raise ShapeError("embeddings", embeddings.shape, params["encoder.embedding"].shape)
        params["encoder.embedding"].assign(embeddings)
    spectators = init_spectators(config)
    shuffle_rng = seeded_rng(config.seed, "shuffle")
    lam = config.effective_lambda
    log = TrainingLog(config=config.to_dict())
    best_accuracy, best_arrays, stale = -1.0, None, 0

    logger.info(
        f"Training k={config.k}, n={config.adversaries}, lambda={lam}, seed={config.seed} "
        f"on {len(corpus.train)} examples"
        + (f", warm-up {config.warmup_epochs} epochs" if config.warmup_epochs else "")
    )
    epochs = tqdm(range(1, config.max_epochs + 1), desc="epochs", disable=not progress, leave=False)
    for epoch in epochs:
        order = shuffle_rng.permutation(len(corpus.train))
        losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = Batch.of([corpus.train[i] for i in order[start : start + config.batch_size]])
                params.zero_grad()
                step = forward(params, batch, lam, config.adversaries, config.task_head, config.adversary_head)
                ad.backward(step.loss)
                _sgd(params, config.learning_rate)
                _spectator_step(spectators, step.e_h.value, batch.labels, config)
                losses.append(float(step.loss.value))
                logger.debug(f"epoch {epoch} batch {start // config.batch_size}: loss={losses[-1]:.4f}")
        except NonFiniteError as e:
            raise DivergenceError(epoch, str(e)) from e

        task, adversaries, spectator = evaluate_split(params, corpus.dev, config, spectators)
        record = EpochRecord(epoch, float(np.mean(losses)), task, adversaries, spectator)
        log.epochs.append(record)
        logger.info(
            f"Epoch {epoch}: loss={record.train_loss:.4f} dev={task:.4f} "
            f"adversaries={[round(a, 4) for a in adversaries]} max_spectator={record.max_spectator_accuracy}"
        )

        if epoch < config.warmup_epochs:
            continue
        if task > best_accuracy:
            best_accuracy, best_arrays, stale = task, params.arrays(), 0
            log.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                log.stopped_early = True
                logger.info(f"Early stop after epoch {epoch}; best epoch {log.best_epoch}")
                break

    params.load_arrays(best_arrays)
    log.final_dev_accuracy = best_accuracy
    return params, log


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    params: ParameterSet
    checkpoint_id: str
    metadata: Dict

    @property
    def k(self) -> int:
        return self.config.k

    def model_spec(self) -> ModelSpec:
        return self.config.model_spec(len(self.vocab))


def save_checkpoint(params: ParameterSet, config: TrainConfig, vocab: Vocabulary, path, extra: Optional[Dict] = None) -> str:
    """
    Write parameters as a versioned binary checkpoint

    Layout: magic, u16 version, u32 metadata length, UTF-8 JSON metadata,
    then little-endian float32 tensor data in directory order.

    Returns:
        checkpoint id (sha256 of the file bytes)
    """
    directory, offset, chunks = [], 0, []
    for p in params:
        data = np.ascontiguousarray(p.value, dtype="<f4")
        directory.append({"name": p.name, "shape": list(p.shape), "offset": offset, "count": int(data.size)})
        offset += data.size
        chunks.append(data.tobytes())
    metadata = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "k": config.k,
        "vocab": vocab.tokens,
        "tensors": directory,
        "extra": extra or {},
    }
    meta_bytes = dumps(metadata).encode("utf-8")
    blob = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(meta_bytes)) + meta_bytes + b"".join(chunks)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    checkpoint_id = hashlib.sha256(blob).hexdigest()
    logger.info(f"Saved checkpoint {path} ({len(params)} tensors, id {checkpoint_id[:12]})")
    return checkpoint_id


def load_checkpoint(path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint

    Raises:
        CheckpointError: missing file, wrong magic or version, corrupt
            metadata or truncated tensor data
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, meta_length = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    body = _HEADER.size + meta_length
    if len(blob) < body:
        raise CheckpointError(f"{path}: truncated metadata")
    metadata = safe_json_loads(blob[_HEADER.size : body].decode("utf-8", errors="replace"), None)
    if not isinstance(metadata, dict) or "tensors" not in metadata:
        raise CheckpointError(f"{path}: corrupt metadata")

    try:
        expected = sum(int(t["count"]) for t in metadata["tensors"])
        if (len(blob) - body) != 4 * expected:
            raise CheckpointError(f"{path}: expected {expected} floats, found {(len(blob) - body) / 4:g}")
        values = np.frombuffer(blob, dtype="<f4", offset=body)
        params = ParameterSet()
        for entry in metadata["tensors"]:
            start, count = int(entry["offset"]), int(entry["count"])
            if start < 0 or start + count > values.size:
                raise CheckpointError(f"{path}: tensor {entry['name']} lies outside the data block")
            array = values[start : start + count].astype(np.float64).reshape(entry["shape"])
            params.add(ad.Parameter(array, entry["name"]))
        config = TrainConfig.from_dict(metadata["config"])
        vocab = Vocabulary(metadata["vocab"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, DebiasError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint ({type(e).__name__}: {e})") from e
    return Checkpoint(
        config=config,
        vocab=vocab,
        params=params,
        checkpoint_id=hashlib.sha256(blob).hexdigest(),
        metadata=metadata,
    )


def checkpoint_from_training(params: ParameterSet, config: TrainConfig, vocab: Vocabulary) -> Checkpoint:
    """In-memory checkpoint, for probing without a file round-trip"""
    digest = hashlib.sha256(params.fingerprint().encode("utf-8")).hexdigest()
    return Checkpoint(config, vocab, params, digest, {"config": config.to_dict(), "k": config.k})
