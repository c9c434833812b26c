"""
Corpora
Synthetic NLI corpora with a planted hypothesis-only leak, JSON-lines
corpus and text embedding loaders, vocabulary handling and baselines
"""

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from debias.errors import CorpusFormatError, EmptySequenceError, LabelError, SyntheticSpecError, VocabularyError
from debias.seeding import seeded_rng

logger = logging.getLogger(__name__)

ENTAILMENT, CONTRADICTION, NEUTRAL = 0, 1, 2
LABELS = ("entailment", "contradiction", "neutral")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}
UNK = "<unk>"
LEAK_TOKENS = ("<leak_e>", "<leak_c>", "<leak_n>")
SPLITS = ("train", "dev", "test")

TokenSequence = Tuple[int, ...]


@dataclass(frozen=True)
class Example:
    premise: TokenSequence
    hypothesis: TokenSequence
    label: int

    def __post_init__(self):
        if len(self.premise) == 0 or len(self.hypothesis) == 0:
            raise EmptySequenceError("premise and hypothesis must be non-empty")
        if self.label not in (ENTAILMENT, CONTRADICTION, NEUTRAL):
            raise LabelError(f"label must be 0, 1 or 2, got {self.label}")


class Vocabulary:
    """Token <-> id mapping; id 0 is always <unk>"""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if not tokens or tokens[0] != UNK:
            tokens = [UNK] + [t for t in tokens if t != UNK]
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, texts: Iterable[Sequence[str]]) -> "Vocabulary":
        """Vocabulary in order of first appearance"""
        seen = {UNK: None}
        for words in texts:
            for w in words:
                seen.setdefault(w, None)
        return cls(list(seen))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __contains__(self, token):
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, 0)

    def ids(self, words: Sequence[str]) -> TokenSequence:
        return tuple(self._index.get(w, 0) for w in words)

    def words(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


@dataclass
class Corpus:
    train: List[Example]
    dev: List[Example]
    test: List[Example]
    vocab: Vocabulary
    name: str = "corpus"

    def split(self, name: str) -> List[Example]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def sizes(self) -> Dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def leak_ids(self) -> Optional[Tuple[int, int, int]]:
        if all(t in self.vocab for t in LEAK_TOKENS):
            return tuple(self.vocab.id(t) for t in LEAK_TOKENS)
        return None


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """
    Planted-bias corpus description

    vocab_size counts content tokens only; token 2j and 2j+1 are antonyms.
    With probability leak_rate a hypothesis ends with its label's leak token,
    otherwise with a uniformly random one.
    """

    vocab_size: int = 200
    leak_rate: float = 0.9
    premise_length: Tuple[int, int] = (5, 12)
    hypothesis_length: Tuple[int, int] = (3, 8)
    length_artifact: bool = False
    leak_shift: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "premise_length", tuple(self.premise_length))
        object.__setattr__(self, "hypothesis_length", tuple(self.hypothesis_length))
        for issue in self.issues():
            raise SyntheticSpecError(issue)

    def issues(self) -> List[str]:
        issues = []
        if not 0.0 <= self.leak_rate <= 1.0:
            issues.append(f"leak_rate must lie in [0, 1], got {self.leak_rate}")
        if self.vocab_size <= 0 or self.vocab_size % 2:
            issues.append(f"vocab_size must be positive and even, got {self.vocab_size}")
        for name, (lo, hi) in (("premise_length", self.premise_length), ("hypothesis_length", self.hypothesis_length)):
            if lo < 1 or hi < lo:
                issues.append(f"{name} must be a range 1 <= lo <= hi, got {(lo, hi)}")
        if self.hypothesis_length[0] < 2:
            issues.append("hypothesis_length must start at 2 or more so neutral hypotheses mix both halves")
        if self.leak_shift not in (0, 1, 2):
            issues.append(f"leak_shift must be 0, 1 or 2, got {self.leak_shift}")
        absent_needed = self.hypothesis_length[1] - self.hypothesis_length[1] // 2
        if not issues and self.vocab_size - 2 * self.premise_length[1] < absent_needed:
            issues.append(
                f"vocab_size {self.vocab_size} too small: need {absent_needed} tokens unrelated to a "
                f"{self.premise_length[1]}-token premise"
            )
        return issues

    def to_dict(self):
        data = asdict(self)
        data["premise_length"] = list(self.premise_length)
        data["hypothesis_length"] = list(self.hypothesis_length)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def synthetic_vocabulary(vocab_size: int) -> Vocabulary:
    return Vocabulary([UNK] + [f"w{j}" for j in range(vocab_size)] + list(LEAK_TOKENS))


def _sample(rng, pool, count):
    return rng.choice(pool, size=count, replace=count > len(pool))


def _hypothesis_length(rng, spec, label):
    lo, hi = spec.hypothesis_length
    if spec.length_artifact and label == ENTAILMENT:
        hi = (lo + hi) // 2
    return int(rng.integers(lo, hi + 1))


def _content_example(rng, spec: SyntheticSpec, label: int, attempts: int = 100):
    """Premise and hypothesis as content indices (0..V-1), before the leak token"""
    lo, hi = spec.premise_length
    for _ in range(attempts):
        premise = rng.integers(0, spec.vocab_size, size=int(rng.integers(lo, hi + 1)))
        length = _hypothesis_length(rng, spec, label)
        if label == ENTAILMENT:
            hypothesis = _sample(rng, premise, length)
        elif label == CONTRADICTION:
            hypothesis = _sample(rng, premise, length)
            antonyms = hypothesis ^ 1
            candidates = np.flatnonzero(~np.isin(antonyms, premise))
            if candidates.size == 0:
                continue
            position = rng.choice(candidates)
            hypothesis[position] = antonyms[position]
        else:
            # absent tokens avoid the antonyms of premise tokens too
            free = np.flatnonzero(~np.isin(np.arange(spec.vocab_size) // 2, premise // 2))
            inside = length // 2
            outside = length - inside
            if free.size < outside:
                continue
            hypothesis = np.concatenate([_sample(rng, premise, inside), rng.choice(free, outside, replace=False)])
        return premise, rng.permutation(hypothesis)
    raise SyntheticSpecError(f"could not build a {LABELS[label]} example in {attempts} attempts")


def _generate_split(spec: SyntheticSpec, split: str, count: int) -> List[Example]:
    rng = seeded_rng(spec.seed, "synthetic", split)
    offset = 1  # content token j has id j + 1
    leak_base = 1 + spec.vocab_size
    examples = []
    for _ in range(count):
        label = int(rng.integers(0, 3))
        premise, hypothesis = _content_example(rng, spec, label)
        if rng.random() < spec.leak_rate:
            leak = (label + spec.leak_shift) % 3
        else:
            leak = int(rng.integers(0, 3))
        examples.append(
            Example(
                premise=tuple(int(t) + offset for t in premise),
                hypothesis=tuple(int(t) + offset for t in hypothesis) + (leak_base + leak,),
                label=label,
            )
        )
    return examples


def generate(spec: SyntheticSpec, sizes: Union[Dict[str, int], Sequence[int]]) -> Corpus:
    """
    Generate a synthetic biased corpus

    Args:
        spec: corpus description
        sizes: per-split example counts, as a dict or (train, dev, test)

    Returns:
        Corpus whose splits come from independent random streams
    """
    if not isinstance(sizes, dict):
        sizes = dict(zip(SPLITS, sizes))
    splits = {s: _generate_split(spec, s, int(sizes.get(s, 0))) for s in SPLITS}
    logger.info(
        f"Generated synthetic corpus (beta={spec.leak_rate}, V={spec.vocab_size}, seed={spec.seed}): "
        + ", ".join(f"{s}={len(v)}" for s, v in splits.items())
    )
    return Corpus(vocab=synthetic_vocabulary(spec.vocab_size), name=f"synthetic-beta{spec.leak_rate:g}", **splits)


def leaked_mask(examples: Sequence[Example], vocab: Vocabulary, leak_shift: int = 0) -> np.ndarray:
    """True where the hypothesis' final token is the leak token of its label"""
    leak_ids = [vocab.id(t) for t in LEAK_TOKENS]
    return np.array([ex.hypothesis[-1] == leak_ids[(ex.label + leak_shift) % 3] for ex in examples], dtype=bool)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def _parse_jsonl(path: Path):
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"malformed JSON ({e.msg})", path, line_number) from e
            if not isinstance(record, dict):
                raise CorpusFormatError("each line must be a JSON object", path, line_number)
            try:
                premise = record["premise"].split()
                hypothesis = record["hypothesis"].split()
                label = record["label"]
            except (KeyError, AttributeError) as e:
                raise CorpusFormatError(f"missing or non-string field {e}", path, line_number) from e
            if label not in LABEL_IDS:
                raise CorpusFormatError(f"unknown label {label!r}", path, line_number)
            if not premise or not hypothesis:
                raise CorpusFormatError("empty premise or hypothesis", path, line_number)
            rows.append((premise, hypothesis, LABEL_IDS[label]))
    if not rows:
        raise CorpusFormatError("empty corpus file", path)
    return rows


def _to_examples(rows, vocab: Vocabulary) -> List[Example]:
    return [Example(vocab.ids(p), vocab.ids(h), y) for p, h, y in rows]


def load_jsonl(path, vocab: Optional[Vocabulary] = None) -> Corpus:
    """
    Load a JSON-lines corpus

    Args:
        path: a directory with train.jsonl (and optionally dev.jsonl,
            test.jsonl), or a single file whose examples become the test split
        vocab: vocabulary to map tokens with; unseen tokens map to <unk>.
            Built from the train split (or the single file) when omitted.

    Returns:
        Corpus with whitespace-tokenised examples
    """
    path = Path(path)
    if path.is_dir():
        train_file = path / "train.jsonl"
        if not train_file.exists():
            raise CorpusFormatError("directory corpus needs a train.jsonl", path)
        rows = {s: _parse_jsonl(path / f"{s}.jsonl") if (path / f"{s}.jsonl").exists() else [] for s in SPLITS}
    elif path.exists():
        rows = {"train": [], "dev": [], "test": _parse_jsonl(path)}
    else:
        raise CorpusFormatError("no such corpus", path)

    if vocab is None:
        source = rows["train"] or rows["test"]
        vocab = Vocabulary.build(words for p, h, _ in source for words in (p, h))
    splits = {s: _to_examples(rows[s], vocab) for s in SPLITS}
    logger.info(f"Loaded corpus {path}: " + ", ".join(f"{s}={len(v)}" for s, v in splits.items()))
    return Corpus(vocab=vocab, name=path.stem, **splits)


def write_jsonl(corpus: Corpus, directory) -> Dict[str, Path]:
    """Write train/dev/test .jsonl files in the loader's format"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for split in SPLITS:
        target = directory / f"{split}.jsonl"
        with open(target, "w", encoding="utf-8") as handle:
            for ex in corpus.split(split):
                record = {
                    "premise": " ".join(corpus.vocab.words(ex.premise)),
                    "hypothesis": " ".join(corpus.vocab.words(ex.hypothesis)),
                    "label": LABELS[ex.label],
                }
                handle.write(json.dumps(record) + "\n")
        written[split] = target
    logger.info(f"Wrote corpus to {directory}")
    return written


def load_embeddings(path, vocab: Vocabulary, seed: int = 0) -> np.ndarray:
    """
    Read a text embedding file ("token v1 ... vd" per line)

    Rows of vocabulary tokens missing from the file are initialised
    Xavier-uniform from the seed.
    """
    path = Path(path)
    vectors = {}
    dim = None
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            token, values = parts[0], parts[1:]
            try:
                row = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as e:
                raise CorpusFormatError(f"non-numeric embedding value ({e})", path, line_number) from e
            if dim is None:
                dim = row.size
                if dim == 0:
                    raise CorpusFormatError("embedding line has no values", path, line_number)
            elif row.size != dim:
                raise CorpusFormatError(f"expected {dim} values, got {row.size}", path, line_number)
            if not np.all(np.isfinite(row)):
                raise CorpusFormatError("non-finite embedding value", path, line_number)
            if token in vocab:
                vectors[token] = row
    if dim is None:
        raise CorpusFormatError("empty embedding file", path)

    bound = np.sqrt(6.0 / (len(vocab) + dim))
    table = seeded_rng(seed, "embeddings").uniform(-bound, bound, size=(len(vocab), dim))
    for token, row in vectors.items():
        table[vocab.id(token)] = row
    logger.info(f"Matched {len(vectors)}/{len(vocab)} vocabulary tokens from {path} (d={dim})")
    return table


# ---------------------------------------------------------------------------
# baselines and features
# ---------------------------------------------------------------------------

def labels_of(examples: Sequence[Example]) -> np.ndarray:
    return np.fromiter((ex.label for ex in examples), dtype=np.int64, count=len(examples))


def majority_baseline(examples: Sequence[Example]) -> float:
    """Accuracy of always predicting the most frequent label"""
    if len(examples) == 0:
        raise CorpusFormatError("majority baseline of an empty split")
    counts = Counter(ex.label for ex in examples)
    return max(counts.values()) / len(examples)


def bag_of_words(examples: Sequence[Example], vocab_size: int, fields=("hypothesis",)) -> sparse.csr_matrix:
    """Token count features over the chosen fields; premise and hypothesis get separate columns"""
    rows, cols = [], []
    for i, ex in enumerate(examples):
        for offset, name in enumerate(fields):
            tokens = getattr(ex, name)
            rows.extend([i] * len(tokens))
            cols.extend(t + offset * vocab_size for t in tokens)
    data = np.ones(len(rows))
    return sparse.csr_matrix((data, (rows, cols)), shape=(len(examples), vocab_size * len(fields)))
