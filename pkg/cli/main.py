"""
Command-line interface
Subcommands gen-data, train, probe, scenario, stats, grid and report.
Exit codes: 0 success, 1 a run or cell failed, 2 invalid configuration
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from cli.experiment import (
    ExperimentConfig,
    build_corpus,
    load_experiment,
    scenario_train_config,
)
from cli.report import build_report, stats_text
from debias.data import SyntheticSpec, generate, majority_baseline, write_jsonl
from debias.errors import ConfigError, CorpusFormatError, DebiasError, SyntheticSpecError
from debias.nn import HeadSpec
from debias.probe import ProbeReport, relearn_bias, run_scenario_matrix
from debias.stats import SampleSet, compare_groups
from debias.train import load_checkpoint, save_checkpoint, train
from runners.grid_runner import run_grid
from utils import config as settings
from utils.json_helper import read_json, write_json

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def configure_logging(level: str, log_file: Optional[Path] = None):
    logging.basicConfig(format=settings.LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(log_file, encoding="utf-8")
        handler.setFormatter(logging.Formatter(settings.LOG_FORMAT))
        logging.getLogger().addHandler(handler)


def _experiment_args(parser):
    parser.add_argument("--config", type=Path, help="JSON experiment file")
    parser.add_argument("--preset", default="desk", help="desk, full or a scenario preset")
    parser.add_argument("--lambda", dest="lam", type=float, help="adversarial trade-off in [0, 1]")
    parser.add_argument("--adversaries", help="adversary count(s), comma separated")
    parser.add_argument("--dim", help="representation dimension(s), comma separated")
    parser.add_argument("--seed", help="seed(s), comma separated")
    parser.add_argument("--beta", type=float, help="synthetic leak rate")
    parser.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run.py", description="Ensemble adversarial debiasing experiments")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic corpus as JSON lines")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--beta", type=float, default=0.9)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--vocab-size", type=int, default=200)
    gen.add_argument("--sizes", default="20000,2000,2000", help="train,dev,test counts")
    gen.add_argument("--leak-shift", type=int, default=0)
    gen.add_argument("--length-artifact", action="store_true")

    tr = sub.add_parser("train", help="train one model and save its checkpoint")
    _experiment_args(tr)
    tr.add_argument("--checkpoint", type=Path)
    tr.add_argument("--progress", action="store_true")

    pr = sub.add_parser("probe", help="relearn the bias from a frozen checkpoint")
    _experiment_args(pr)
    pr.add_argument("--checkpoint", type=Path, required=True)
    pr.add_argument("--head", action="append", help="probe head kind (repeatable)")
    pr.add_argument("--m", type=int)
    pr.add_argument("--report", type=Path)

    sc = sub.add_parser("scenario", help="train/probe scenario matrix")
    _experiment_args(sc)
    sc.add_argument("--m", type=int)

    st = sub.add_parser("stats", help="compare two groups of accuracies")
    st.add_argument("--a", nargs="+", type=Path, required=True, help="probe report JSONs or JSON lists")
    st.add_argument("--b", nargs="+", type=Path, required=True)
    st.add_argument("--factor", type=int, default=1, help="Bonferroni factor")
    st.add_argument("--iterations", type=int, default=settings.BOOTSTRAP_ITERATIONS)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--json", type=Path, help="write the results here")

    gr = sub.add_parser("grid", help="run the k x n x seed grid")
    _experiment_args(gr)
    gr.add_argument("--workers", type=int)
    gr.add_argument("--no-progress", action="store_true")

    rp = sub.add_parser("report", help="aggregate a grid output directory")
    rp.add_argument("--out", type=Path, default=Path(settings.OUTPUT_DIR))
    rp.add_argument("--compare", default="1,5", help="two adversary counts")
    rp.add_argument("--iterations", type=int, default=settings.BOOTSTRAP_ITERATIONS)
    rp.add_argument("--seed", type=int, default=0)
    return parser


def prepare_experiment(args) -> ExperimentConfig:
    overrides = {
        "lambda": args.lam,
        "adversaries": args.adversaries,
        "dim": args.dim,
        "seed": args.seed,
        "beta": args.beta,
        "out": args.out,
    }
    raw = load_experiment(args.config, args.preset, overrides)
    status = settings.validate_config(raw)
    if not status["valid"]:
        for issue in status["issues"]:
            print(f"⚠️ {issue}")
        raise ConfigError(f"{len(status['issues'])} configuration issue(s)")
    return ExperimentConfig.from_dict(raw)


def cmd_gen_data(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    if len(sizes) != 3:
        raise ConfigError("--sizes needs train,dev,test counts")
    spec = SyntheticSpec(
        vocab_size=args.vocab_size,
        leak_rate=args.beta,
        leak_shift=args.leak_shift,
        length_artifact=args.length_artifact,
        seed=args.seed,
    )
    corpus = generate(spec, sizes)
    write_jsonl(corpus, args.out)
    write_json(args.out / "spec.json", spec.to_dict())
    print(f"✅ Wrote {sum(sizes)} examples to {args.out} (majority baseline {majority_baseline(corpus.test):.3f})")
    return EXIT_OK


def cmd_train(args) -> int:
    experiment = prepare_experiment(args)
    cell = experiment.cells[0]
    config = experiment.train_config(cell)
    corpus, embeddings = build_corpus(experiment.raw)
    params, log = train(corpus, config, embeddings=embeddings, progress=args.progress)
    path = args.checkpoint or experiment.output_dir / "checkpoints" / f"{cell.cell_id}.aedb"
    checkpoint_id = save_checkpoint(params, config, corpus.vocab, path)
    write_json(path.with_suffix(".log.json"), log.to_dict())
    print(f"✅ Checkpoint {path} (id {checkpoint_id[:12]}), dev accuracy {log.final_dev_accuracy:.4f}")
    return EXIT_OK


def cmd_probe(args) -> int:
    experiment = prepare_experiment(args)
    checkpoint = load_checkpoint(args.checkpoint)
    corpus, _ = build_corpus(experiment.raw)
    try:
        heads = [HeadSpec.from_dict(h) for h in args.head] if args.head else experiment.probe_heads
    except ValueError as e:
        raise ConfigError(f"unknown probe head ({e})") from e
    m = args.m or experiment.probe_m
    for head in heads:
        report = relearn_bias(checkpoint, corpus, head, m, config=experiment.probe_config)
        target = args.report if args.report and len(heads) == 1 else args.checkpoint.with_suffix(f".{head.kind.value}.probe.json")
        report.save(target)
        print(f"✅ {head.kind.value} probes (m={m}): max {report.max_accuracy:.4f} -> {target}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    experiment = prepare_experiment(args)
    corpus, _ = build_corpus(experiment.raw)
    config = scenario_train_config(experiment)
    reports = run_scenario_matrix(corpus, config, args.m or experiment.probe_m, experiment.probe_config)
    target = experiment.output_dir / "reports" / f"scenario_{experiment.name}.json"
    write_json(target, {"k": config.k, "n": config.adversaries, "reports": {k: r.to_dict() for k, r in reports.items()}})
    for name, report in reports.items():
        print(f"• {name}: max {report.max_accuracy:.4f}")
    print(f"✅ Scenario matrix written to {target}")
    return EXIT_OK


def _load_group(paths: List[Path]) -> List[float]:
    values = []
    for path in paths:
        try:
            data = read_json(path)
        except (OSError, ValueError) as e:
            raise CorpusFormatError(f"cannot read accuracies ({e})", path) from e
        if isinstance(data, list):
            values.extend(float(v) for v in data)
        elif isinstance(data, dict) and "accuracies" in data:
            values.append(ProbeReport.from_dict(data).max_accuracy)
        else:
            raise CorpusFormatError("expected a probe report or a list of accuracies", path)
    return values


def cmd_stats(args) -> int:
    samples = SampleSet(_load_group(args.a), _load_group(args.b), ("a", "b"))
    row = compare_groups(samples, label="a vs b", factor=args.factor, iterations=args.iterations, seed=args.seed)
    print(stats_text([row]))
    if args.json:
        write_json(
            args.json,
            {"row": row.to_dict(), "mann_whitney": row.mann_whitney.to_dict(), "bootstrap": row.bootstrap.to_dict()},
        )
    return EXIT_OK


def cmd_grid(args) -> int:
    experiment = prepare_experiment(args)
    configure_logging(args.log_level, experiment.output_dir / "reports" / "experiment.log")
    logger.info(f"Settings: {settings.load_config()}")
    result = run_grid(experiment, workers=args.workers, progress=not args.no_progress)
    print(
        f"{'✅' if result.ok else '❌'} {len(result.records)} cells complete "
        f"({len(result.trained)} trained, {len(result.skipped)} skipped), {len(result.failed)} failed"
    )
    if result.records:
        build_report(experiment.output_dir, tuple(experiment.stats["compare"]), experiment.stats["iterations"], experiment.stats["seed"])
    return EXIT_OK if result.ok else EXIT_FAILED


def cmd_report(args) -> int:
    compare = tuple(int(v) for v in args.compare.split(","))
    if len(compare) != 2:
        raise ConfigError("--compare needs two adversary counts")
    written = build_report(args.out, compare, args.iterations, args.seed)
    for name, path in written.items():
        print(f"• {name}: {path}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "probe": cmd_probe,
    "scenario": cmd_scenario,
    "stats": cmd_stats,
    "grid": cmd_grid,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SyntheticSpecError) as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except DebiasError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"❌ {e}")
        return EXIT_FAILED
    except ValueError as e:
        # malformed flag values such as non-numeric counts
        print(f"❌ Invalid argument: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
