"""
Experiment configuration
JSON experiment files deep-merged over a preset, flag overrides, validation
and construction of the corpora an experiment names
"""

import copy
import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from debias.data import Corpus, SyntheticSpec, generate, load_embeddings, load_jsonl
from debias.errors import ConfigError, DebiasError
from debias.nn import HeadSpec
from debias.probe import ProbeConfig
from debias.train import TrainConfig
from utils import config as settings
from utils.json_helper import dumps, read_json

logger = logging.getLogger(__name__)

DEFAULT_EXPERIMENT = {
    "name": "desk",
    "output_dir": settings.OUTPUT_DIR,
    "data": {
        "kind": "synthetic",
        "synthetic": {"vocab_size": 200, "leak_rate": 0.9, "seed": 0},
        "sizes": {"train": 20000, "dev": 2000, "test": 2000},
        "path": None,
        "embeddings": None,
    },
    "eval_corpora": [
        {"name": "synthetic-shifted", "kind": "synthetic", "leak_rate": 0.8, "leak_shift": 1, "seed": 101, "size": 2000},
        {"name": "synthetic-unbiased", "kind": "synthetic", "leak_rate": 0.0, "seed": 102, "size": 2000},
    ],
    "grid": {"k": [32, 64, 128], "n": [0, 1, 5, 10], "seeds": [0, 1, 2]},
    "train": {"lambda": 0.5, "spectators": settings.SPECTATORS},
    "probe": {"heads": ["linear"], "m": 20, "workers": settings.PROBE_WORKERS},
    "hard_subset": {"model": "bow"},
    "stats": {"compare": [1, 5], "iterations": settings.BOOTSTRAP_ITERATIONS, "seed": 0},
    "scenario": {"k": 64, "n": 5},
}

PRESETS = {
    "desk": {},
    "full": {
        "name": "full",
        "grid": {"k": [256, 512, 1024, 2048], "n": [0, 1, 5, 10, 20], "seeds": list(range(10))},
    },
    "scenario-512": {"name": "scenario-512", "scenario": {"k": 512, "n": 5}},
    "scenario-2048": {"name": "scenario-2048", "scenario": {"k": 2048, "n": 10}},
    "scenario-desk-small": {"name": "scenario-desk-small", "scenario": {"k": 32, "n": 5}},
    "scenario-desk-large": {"name": "scenario-desk-large", "scenario": {"k": 128, "n": 10}},
}

# keys fixed per grid cell rather than by the train template
CELL_KEYS = ("k", "adversaries", "seed")


def deep_merge(base: Dict, override: Dict) -> Dict:
    """Recursively merge override into a copy of base; lists are replaced"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _int_list(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def apply_overrides(raw: Dict, overrides: Optional[Dict]) -> Dict:
    """
    Apply command-line overrides

    Args:
        raw: merged experiment dictionary
        overrides: any of lambda, adversaries, dim, seed, beta, out; counts
            accept comma-separated lists
    """
    raw = copy.deepcopy(raw)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "lambda" in overrides:
        raw["train"]["lambda"] = float(overrides["lambda"])
    if "adversaries" in overrides:
        raw["grid"]["n"] = _int_list(overrides["adversaries"])
        raw["scenario"]["n"] = raw["grid"]["n"][0]
    if "dim" in overrides:
        raw["grid"]["k"] = _int_list(overrides["dim"])
        raw["scenario"]["k"] = raw["grid"]["k"][0]
    if "seed" in overrides:
        raw["grid"]["seeds"] = _int_list(overrides["seed"])
    if "beta" in overrides:
        raw["data"]["synthetic"]["leak_rate"] = float(overrides["beta"])
    if "out" in overrides:
        raw["output_dir"] = str(overrides["out"])
    return raw


def load_experiment(path=None, preset: str = "desk", overrides: Optional[Dict] = None) -> Dict:
    """Defaults, then preset, then the JSON file, then flag overrides"""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    raw = deep_merge(DEFAULT_EXPERIMENT, PRESETS[preset])
    if path is not None:
        try:
            user = read_json(path)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read experiment file {path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError(f"experiment file {path} must hold a JSON object")
        raw = deep_merge(raw, user)
    return apply_overrides(raw, overrides)


def _train_template(raw: Dict) -> TrainConfig:
    template = {k: v for k, v in raw.get("train", {}).items() if k not in CELL_KEYS}
    return TrainConfig.from_dict(template)


def _synthetic_spec(raw: Dict) -> SyntheticSpec:
    return SyntheticSpec.from_dict(raw["data"].get("synthetic", {}))


def experiment_issues(raw: Dict) -> List[str]:
    """Every violated constraint of an experiment dictionary, as readable messages"""
    issues = []
    grid = raw.get("grid", {})
    for key in ("k", "n", "seeds"):
        values = grid.get(key)
        if not isinstance(values, list) or not values:
            issues.append(f"grid.{key} must be a non-empty list")
    if isinstance(grid.get("seeds"), list) and len(set(grid["seeds"])) != len(grid["seeds"]):
        issues.append("grid.seeds must be distinct")
    if any(not isinstance(k, int) or k < 1 for k in grid.get("k") or []):
        issues.append("grid.k values must be positive integers")
    if any(not isinstance(n, int) or n < 0 for n in grid.get("n") or []):
        issues.append("grid.n values must be non-negative integers")

    try:
        issues.extend(f"train: {issue}" for issue in _train_template(raw).issues())
    except (TypeError, ValueError) as e:
        issues.append(f"train: {e}")

    data = raw.get("data", {})
    if data.get("kind") == "synthetic":
        try:
            _synthetic_spec(raw)
        except (TypeError, DebiasError) as e:
            issues.append(f"data.synthetic: {e}")
        sizes = data.get("sizes", {})
        if any(int(sizes.get(s, 0)) < 1 for s in ("train", "dev", "test")):
            issues.append("data.sizes must give train, dev and test a positive count")
    elif data.get("kind") == "jsonl":
        if not data.get("path"):
            issues.append("data.path is required for jsonl corpora")
    else:
        issues.append(f"data.kind must be 'synthetic' or 'jsonl', got {data.get('kind')!r}")

    for i, extra in enumerate(raw.get("eval_corpora", [])):
        if extra.get("kind") not in ("synthetic", "jsonl"):
            issues.append(f"eval_corpora[{i}].kind must be 'synthetic' or 'jsonl'")
        elif extra["kind"] == "synthetic" and data.get("kind") != "synthetic":
            issues.append(f"eval_corpora[{i}]: synthetic evaluation corpora need a synthetic training corpus")
        elif extra["kind"] == "jsonl" and not extra.get("path"):
            issues.append(f"eval_corpora[{i}].path is required")
        if not extra.get("name"):
            issues.append(f"eval_corpora[{i}].name is required")

    probe = raw.get("probe", {})
    if int(probe.get("m", 0)) < 1:
        issues.append("probe.m must be >= 1")
    try:
        heads = [HeadSpec.from_dict(h) for h in probe.get("heads", [])]
        if not heads:
            issues.append("probe.heads must name at least one head")
        ProbeConfig(**{k: v for k, v in probe.items() if k not in ("heads", "m")}).validate()
    except (TypeError, ValueError) as e:
        issues.append(f"probe: {e}")

    if raw.get("hard_subset", {}).get("model") not in ("bow", "majority"):
        issues.append("hard_subset.model must be 'bow' or 'majority'")
    stats = raw.get("stats", {})
    if not isinstance(stats.get("compare"), list) or len(stats["compare"]) != 2:
        issues.append("stats.compare must list two adversary counts")
    if int(stats.get("iterations", 0)) < 1000:
        issues.append("stats.iterations must be >= 1000")
    return issues


@dataclass(frozen=True)
class CellSpec:
    k: int
    n: int
    seed: int

    @property
    def cell_id(self) -> str:
        return f"k{self.k}-n{self.n}-s{self.seed}"


@dataclass
class ExperimentConfig:
    """Validated experiment: data, grid, training template, probes and outputs"""

    raw: Dict
    train_template: TrainConfig
    probe_heads: List[HeadSpec]
    probe_m: int
    probe_config: ProbeConfig
    cells: List[CellSpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: Dict) -> "ExperimentConfig":
        issues = experiment_issues(raw)
        if issues:
            raise ConfigError("; ".join(issues))
        probe = raw["probe"]
        grid = raw["grid"]
        return cls(
            raw=raw,
            train_template=_train_template(raw),
            probe_heads=[HeadSpec.from_dict(h) for h in probe["heads"]],
            probe_m=int(probe["m"]),
            probe_config=ProbeConfig(**{k: v for k, v in probe.items() if k not in ("heads", "m")}),
            cells=[CellSpec(k, n, s) for k in grid["k"] for n in grid["n"] for s in grid["seeds"]],
        )

    @property
    def name(self) -> str:
        return self.raw.get("name", "experiment")

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    @property
    def stats(self) -> Dict:
        return self.raw["stats"]

    def train_config(self, cell: CellSpec) -> TrainConfig:
        return replace(self.train_template, k=cell.k, adversaries=cell.n, seed=cell.seed)

    def content_hash(self, cell: CellSpec) -> str:
        """Hash of everything that determines a cell's results"""
        payload = {
            "data": self.raw["data"],
            "eval_corpora": self.raw.get("eval_corpora", []),
            "train": self.train_config(cell).to_dict(),
            "probe": self.raw["probe"],
            "hard_subset": self.raw["hard_subset"],
        }
        payload["probe"] = {k: v for k, v in payload["probe"].items() if k != "workers"}
        return hashlib.sha256(dumps(payload).encode("utf-8")).hexdigest()


def build_corpus(raw: Dict) -> Tuple[Corpus, Optional[object]]:
    """
    Training corpus and, when configured, its embedding table

    Returns:
        (corpus, embeddings or None)
    """
    data = raw["data"]
    if data["kind"] == "synthetic":
        corpus = generate(_synthetic_spec(raw), data["sizes"])
    else:
        corpus = load_jsonl(data["path"])
    embeddings = None
    if data.get("embeddings"):
        embeddings = load_embeddings(data["embeddings"], corpus.vocab, seed=data.get("synthetic", {}).get("seed", 0))
    return corpus, embeddings


def build_eval_corpora(raw: Dict, base: Corpus) -> Dict[str, List]:
    """Extra evaluation splits keyed by name, all in the base vocabulary"""
    corpora = {}
    for extra in raw.get("eval_corpora", []):
        if extra["kind"] == "synthetic":
            spec = replace(
                _synthetic_spec(raw),
                leak_rate=float(extra.get("leak_rate", 0.0)),
                leak_shift=int(extra.get("leak_shift", 0)),
                seed=int(extra.get("seed", 0)),
            )
            corpora[extra["name"]] = generate(spec, {"test": int(extra.get("size", 2000))}).test
        else:
            loaded = load_jsonl(extra["path"], vocab=base.vocab)
            corpora[extra["name"]] = loaded.test or loaded.dev or loaded.train
    return corpora


def scenario_train_config(experiment: ExperimentConfig) -> TrainConfig:
    scenario = experiment.raw["scenario"]
    seed = experiment.raw["grid"]["seeds"][0]
    return replace(experiment.train_template, k=int(scenario["k"]), adversaries=int(scenario["n"]), seed=seed)
