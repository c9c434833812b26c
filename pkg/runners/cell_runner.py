"""
Cell Runner
One grid cell: train, checkpoint, relearn the bias, evaluate on the test
split, the hard subset and every extra evaluation corpus
"""

import functools
import logging

from cli.experiment import CellSpec, ExperimentConfig, build_corpus, build_eval_corpora
from debias.data import majority_baseline
from debias.probe import HypothesisOnlyBaseline, MajorityClassModel, evaluate, hard_subset, relearn_bias
from debias.train import load_checkpoint, save_checkpoint, train
from runners.message_protocol import CellMessage
from runners.runner_base import Runner
from utils.json_helper import dumps, safe_json_loads

logger = logging.getLogger(__name__)


@functools.lru_cache(maxsize=4)
def _corpora(raw_json: str):
    """Corpora are rebuilt once per worker process and shared by its cells"""
    raw = safe_json_loads(raw_json)
    corpus, embeddings = build_corpus(raw)
    extra = build_eval_corpora(raw, corpus)
    if raw["hard_subset"]["model"] == "bow":
        baseline = HypothesisOnlyBaseline(len(corpus.vocab), seed=0).fit(corpus.train)
    else:
        baseline = MajorityClassModel().fit(corpus.train)
    hard = hard_subset(corpus, baseline, "test")
    return corpus, embeddings, extra, hard


def corpora_for(experiment: ExperimentConfig):
    raw = experiment.raw
    key_fields = {k: raw[k] for k in ("data", "eval_corpora", "hard_subset") if k in raw}
    return _corpora(dumps(key_fields))


class CellRunner(Runner):
    """Runs one (k, n, seed) cell and returns its record"""

    def __init__(self):
        super().__init__("cell")

    def run(self, payload):
        experiment = ExperimentConfig.from_dict(payload["experiment"])
        cell = CellSpec(**payload["cell"])
        out = experiment.output_dir
        config = experiment.train_config(cell)
        corpus, embeddings, extra, hard = corpora_for(experiment)

        self.logger.info(f"Cell {cell.cell_id}: training")
        params, log = train(corpus, config, embeddings=embeddings)

        checkpoint_path = out / "checkpoints" / f"{cell.cell_id}.aedb"
        save_checkpoint(params, config, corpus.vocab, checkpoint_path, extra={"cell_id": cell.cell_id})
        # probe the stored encoder so reports trace back to the file on disk
        checkpoint = load_checkpoint(checkpoint_path)

        probes = {}
        for head in experiment.probe_heads:
            report = relearn_bias(checkpoint, corpus, head, experiment.probe_m, config=experiment.probe_config)
            path = out / "probes" / f"{cell.cell_id}.{head.kind.value}.json"
            report.save(path)
            probes[head.kind.value] = {"path": str(path), "max": report.max_accuracy, "accuracies": report.accuracies}

        accuracy = {
            "dev": evaluate(checkpoint, corpus, "dev"),
            "test": evaluate(checkpoint, corpus, "test"),
            "hard": evaluate(checkpoint, hard),
            "hard_size": len(hard),
            "corpora": {name: evaluate(checkpoint, examples) for name, examples in extra.items()},
        }
        test_text = "n/a" if accuracy["test"] is None else f"{accuracy['test']:.4f}"
        self.logger.info(
            f"Cell {cell.cell_id}: test={test_text} "
            + " ".join(f"{h}-probe max={p['max']:.4f}" for h, p in probes.items())
        )
        return {
            "cell_id": cell.cell_id,
            "k": cell.k,
            "n": cell.n,
            "seed": cell.seed,
            "content_hash": payload["content_hash"],
            "config": config.to_dict(),
            "checkpoint": {"path": str(checkpoint_path), "id": checkpoint.checkpoint_id},
            "primary_probe": experiment.probe_heads[0].kind.value,
            "probes": probes,
            "training": log.summary(),
            "accuracy": accuracy,
            "majority_baseline": majority_baseline(corpus.test),
        }


def run_cell_task(payload) -> str:
    """Process-pool entry point; returns the cell message as JSON"""
    result = CellRunner().safe_run(payload)
    return CellMessage.from_run_result(result, CellSpec(**payload["cell"]).cell_id).to_json()
