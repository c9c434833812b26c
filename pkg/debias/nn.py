"""
Model components
Shared sentence encoder, premise-hypothesis combiner, task head and
hypothesis-only adversary heads
"""

import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from debias import autodiff as ad
from debias.errors import ConfigError, EmptySequenceError, ShapeError, VocabularyError
from debias.seeding import seeded_rng

logger = logging.getLogger(__name__)

NUM_CLASSES = 3
DEFAULT_EMBED_DIM = 50
DEFAULT_TASK_HIDDEN = 512


class EncoderKind(str, Enum):
    MEAN_POOL = "mean_pool"
    SIMPLE_RECURRENT = "simple_recurrent"


class HeadKind(str, Enum):
    LINEAR = "linear"
    MLP1 = "mlp1"  # one tanh hidden layer
    MLP3 = "mlp3"  # three linear layers, two tanh layers


@dataclass(frozen=True)
class HeadSpec:
    """Classifier head shape; hidden defaults depend on the kind"""

    kind: HeadKind = HeadKind.LINEAR
    hidden: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", HeadKind(self.kind))
        if self.hidden is not None and self.hidden <= 0:
            raise ConfigError(f"hidden width must be positive, got {self.hidden}")

    def hidden_width(self, k: int) -> int:
        if self.hidden is not None:
            return self.hidden
        return DEFAULT_TASK_HIDDEN if self.kind is HeadKind.MLP1 else k

    @property
    def layer_count(self) -> int:
        return {HeadKind.LINEAR: 1, HeadKind.MLP1: 2, HeadKind.MLP3: 3}[self.kind]

    def to_dict(self):
        return {"kind": self.kind.value, "hidden": self.hidden}

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, HeadSpec):
            return data
        if isinstance(data, str):
            return cls(HeadKind(data))
        return cls(HeadKind(data.get("kind", "linear")), data.get("hidden"))


LINEAR = HeadSpec(HeadKind.LINEAR)
MLP3 = HeadSpec(HeadKind.MLP3)


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to build θ_e, θ_c and n adversaries"""

    vocab_size: int
    k: int = 64
    embed_dim: int = DEFAULT_EMBED_DIM
    encoder: EncoderKind = EncoderKind.MEAN_POOL
    task_head: HeadSpec = field(default_factory=lambda: HeadSpec(HeadKind.MLP1))
    adversary_head: HeadSpec = LINEAR
    adversaries: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder", EncoderKind(self.encoder))
        object.__setattr__(self, "task_head", HeadSpec.from_dict(self.task_head))
        object.__setattr__(self, "adversary_head", HeadSpec.from_dict(self.adversary_head))
        if self.vocab_size <= 0 or self.k <= 0 or self.embed_dim <= 0:
            raise ConfigError("vocab_size, k and embed_dim must be positive")
        if self.adversaries < 0:
            raise ConfigError(f"adversary count must be >= 0, got {self.adversaries}")

    def to_dict(self):
        data = asdict(self)
        data["encoder"] = self.encoder.value
        data["task_head"] = self.task_head.to_dict()
        data["adversary_head"] = self.adversary_head.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class ParameterSet:
    """Named parameters, ordered by insertion"""

    def __init__(self, params: Optional[Sequence[ad.Parameter]] = None):
        self._params: "OrderedDict[str, ad.Parameter]" = OrderedDict()
        for p in params or ():
            self.add(p)

    def add(self, param: ad.Parameter):
        if param.name in self._params:
            raise ConfigError(f"duplicate parameter name {param.name}")
        self._params[param.name] = param

    def merge(self, other: "ParameterSet") -> "ParameterSet":
        for p in other:
            self.add(p)
        return self

    def __getitem__(self, name) -> ad.Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self) -> Iterator[ad.Parameter]:
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def subset(self, prefix: str) -> "ParameterSet":
        return ParameterSet([p for name, p in self._params.items() if name.startswith(prefix)])

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        for name, values in arrays.items():
            self._params[name].assign(values)

    def copy(self) -> "ParameterSet":
        return ParameterSet([ad.Parameter(p.value.copy(), p.name) for p in self])

    def zero_grad(self):
        ad.zero_grad(self)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, p in self._params.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.value).tobytes())
        return digest.hexdigest()

    def __repr__(self):
        return f"ParameterSet({len(self)} tensors)"


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_encoder(spec: ModelSpec, rng: np.random.Generator) -> ParameterSet:
    d, k = spec.embed_dim, spec.k
    params = [ad.Parameter(xavier_uniform(rng, spec.vocab_size, d), "encoder.embedding")]
    if spec.encoder is EncoderKind.MEAN_POOL:
        params.append(ad.Parameter(xavier_uniform(rng, d, k), "encoder.projection"))
    else:
        params.append(ad.Parameter(xavier_uniform(rng, d, k), "encoder.w_x"))
        params.append(ad.Parameter(xavier_uniform(rng, k, k), "encoder.w_h"))
    params.append(ad.Parameter(np.zeros(k), "encoder.bias"))
    return ParameterSet(params)


def head_widths(head: HeadSpec, in_dim: int, k: int) -> List[int]:
    hidden = head.hidden_width(k)
    if head.kind is HeadKind.LINEAR:
        return [in_dim, NUM_CLASSES]
    if head.kind is HeadKind.MLP1:
        return [in_dim, hidden, NUM_CLASSES]
    return [in_dim, hidden, hidden, NUM_CLASSES]


def init_head(head: HeadSpec, in_dim: int, k: int, rng: np.random.Generator, prefix: str) -> ParameterSet:
    """Xavier-uniform weights, zero biases"""
    widths = head_widths(head, in_dim, k)
    params = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params.append(ad.Parameter(xavier_uniform(rng, fan_in, fan_out), f"{prefix}.layer{i}.weight"))
        params.append(ad.Parameter(np.zeros(fan_out), f"{prefix}.layer{i}.bias"))
    return ParameterSet(params)


def adversary_prefix(index: int) -> str:
    return f"adversary.{index}"


def init_params(spec: ModelSpec, seed: int) -> ParameterSet:
    """
    Initialise θ_e, θ_c and θ_{a_1..n}

    Each component draws from its own stream, so the encoder and task head
    are identical whatever the adversary count.
    """
    params = init_encoder(spec, seeded_rng(seed, "encoder"))
    params.merge(init_head(spec.task_head, 4 * spec.k, spec.k, seeded_rng(seed, "task"), "task"))
    for i in range(spec.adversaries):
        rng = seeded_rng(seed, "adversary", i)
        params.merge(init_head(spec.adversary_head, spec.k, spec.k, rng, adversary_prefix(i)))
    logger.debug(f"Initialised {len(params)} tensors for k={spec.k}, n={spec.adversaries}")
    return params


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _validate_sequences(sequences, vocab_size):
    if len(sequences) == 0:
        raise EmptySequenceError("cannot encode an empty batch")
    for s in sequences:
        if len(s) == 0:
            raise EmptySequenceError("cannot encode an empty token sequence")
    flat = np.fromiter((t for s in sequences for t in s), dtype=np.int64)
    if flat.size and (flat.min() < 0 or flat.max() >= vocab_size):
        raise VocabularyError(f"token id out of range [0, {vocab_size}): {flat.min()}..{flat.max()}")
    return flat


def encoder_kind(params: ParameterSet) -> EncoderKind:
    return EncoderKind.MEAN_POOL if "encoder.projection" in params else EncoderKind.SIMPLE_RECURRENT


def encode_batch(params: ParameterSet, sequences: Sequence[Sequence[int]]) -> ad.Node:
    """
    Encode B token sequences into a [B, k] representation node

    Args:
        params: parameter set holding the encoder.* tensors; the encoder
            family follows from which tensors are present
        sequences: non-empty token id sequences

    Returns:
        graph node of shape [B, k]
    """
    kind = encoder_kind(params)
    table = params["encoder.embedding"]
    flat = _validate_sequences(sequences, table.shape[0])
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)

    if kind is EncoderKind.MEAN_POOL:
        pooled = ad.segment_mean(ad.embedding(table, flat), lengths)
        return ad.add(ad.matmul(pooled, params["encoder.projection"]), params["encoder.bias"])

    batch, steps = len(sequences), int(lengths.max())
    padded = np.zeros((batch, steps), dtype=np.int64)
    mask = np.zeros((batch, steps), dtype=bool)
    for i, s in enumerate(sequences):
        padded[i, : len(s)] = s
        mask[i, : len(s)] = True
    # time-major so that each step is a contiguous block of rows
    inputs = ad.matmul(ad.embedding(table, padded.T.reshape(-1)), params["encoder.w_x"])
    hidden = None
    states = []
    for t in range(steps):
        x_t = ad.row_slice(inputs, t * batch, (t + 1) * batch)
        pre = x_t if hidden is None else ad.add(x_t, ad.matmul(hidden, params["encoder.w_h"]))
        hidden = ad.tanh(ad.add(pre, params["encoder.bias"]))
        states.append(hidden)
    return ad.max_over_time(states, mask)


def encode(params: ParameterSet, sequence: Sequence[int]) -> np.ndarray:
    """Representation of a single sequence, shape [k]"""
    return encode_batch(params, [sequence]).value[0]


def combine(e_h, e_p) -> ad.Node:
    """[e_h ; e_p ; e_h − e_p ; e_h ⊙ e_p]"""
    e_h, e_p = ad._as_node(e_h), ad._as_node(e_p)
    if e_h.shape != e_p.shape:
        raise ShapeError("combine", e_h.shape, e_p.shape)
    return ad.concat([e_h, e_p, ad.sub(e_h, e_p), ad.elementwise_mul(e_h, e_p)], axis=-1)


def head_logits(params: ParameterSet, prefix: str, head: HeadSpec, x) -> ad.Node:
    """Feedforward evaluation: tanh between layers, affine output"""
    x = ad._as_node(x)
    first = params[f"{prefix}.layer0.weight"]
    if x.shape[-1] != first.shape[0]:
        raise ShapeError(f"{prefix} input", x.shape, first.shape)
    out = x
    for i in range(head.layer_count):
        out = ad.add(ad.matmul(out, params[f"{prefix}.layer{i}.weight"]), params[f"{prefix}.layer{i}.bias"])
        if i < head.layer_count - 1:
            out = ad.tanh(out)
    return out


def task_logits(params: ParameterSet, head: HeadSpec, combined) -> ad.Node:
    combined = ad._as_node(combined)
    k = params["encoder.bias"].shape[0] if "encoder.bias" in params else None
    if k is not None and combined.shape[-1] != 4 * k:
        raise ShapeError("task_logits", combined.shape, (4 * k,))
    return head_logits(params, "task", head, combined)


def adversary_logits(params: ParameterSet, index: int, head: HeadSpec, e_h) -> ad.Node:
    """ŷ_{a_i} from the hypothesis representation alone"""
    e_h = ad._as_node(e_h)
    k = params["encoder.bias"].shape[0] if "encoder.bias" in params else None
    if k is not None and e_h.shape[-1] != k:
        raise ShapeError("adversary_logits", e_h.shape, (k,))
    return head_logits(params, adversary_prefix(index), head, e_h)


def predict(logits: ad.Node) -> np.ndarray:
    return np.argmax(logits.value, axis=-1)
