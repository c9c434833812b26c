"""
Grid reports
Aggregates cell records into the bias, significance, corpus-delta and
during-vs-relearned tables; every aggregated number lists the cells it
came from
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from debias.errors import ConfigError
from debias.stats import SampleSet, bootstrap_test, compare_groups
from utils.exporter import (
    create_text_report,
    export_csv,
    plot_during_vs_relearned,
    plot_relearned_box,
    write_text_report,
)
from utils.json_helper import read_json, write_json
from utils.run_ledger import CELL_COLUMNS, RunLedger

logger = logging.getLogger(__name__)


def load_records(output_dir) -> List[Dict]:
    cells_dir = Path(output_dir) / "cells"
    records = [read_json(p) for p in sorted(cells_dir.glob("*.json"))] if cells_dir.exists() else []
    if not records:
        raise ConfigError(f"no completed cells under {cells_dir}")
    return records


def cell_frame(records: Sequence[Dict]) -> pd.DataFrame:
    """One row per cell"""
    rows = []
    for r in records:
        primary = r["probes"][r["primary_probe"]]
        row = {
            "cell_id": r["cell_id"],
            "k": r["k"],
            "n": r["n"],
            "seed": r["seed"],
            "relearned_bias": primary["max"],
            "during_training_bias": r["training"].get("during_training_bias"),
            "final_dev_accuracy": r["training"].get("final_dev_accuracy"),
            "task_test": r["accuracy"].get("test"),
            "task_hard": r["accuracy"].get("hard"),
            "hard_size": r["accuracy"].get("hard_size"),
        }
        for head, probe in r["probes"].items():
            row[f"relearned_{head}"] = probe["max"]
        rows.append(row)
    frame = pd.DataFrame(rows)
    for column in ("during_training_bias", "final_dev_accuracy", "task_test", "task_hard"):
        frame[column] = pd.to_numeric(frame[column], errors="coerce").astype(float)
    return frame.sort_values(["k", "n", "seed"]).reset_index(drop=True)


def corpus_frame(records: Sequence[Dict]) -> pd.DataFrame:
    """Long format: one row per (cell, evaluation corpus)"""
    rows = []
    for r in records:
        accuracies = {"test": r["accuracy"].get("test"), "hard": r["accuracy"].get("hard")}
        accuracies.update(r["accuracy"].get("corpora", {}))
        for corpus, accuracy in accuracies.items():
            rows.append({"cell_id": r["cell_id"], "k": r["k"], "n": r["n"], "seed": r["seed"], "corpus": corpus, "accuracy": accuracy})
    frame = pd.DataFrame(rows)
    frame["accuracy"] = pd.to_numeric(frame["accuracy"], errors="coerce").astype(float)
    return frame


def _cells(group: pd.DataFrame) -> str:
    return ";".join(sorted(group["cell_id"]))


def bias_table(cells: pd.DataFrame, value: str = "relearned_bias") -> pd.DataFrame:
    """Rows k, columns n, mean over seeds; missing cells stay NA"""
    ks = sorted(cells["k"].unique())
    ns = sorted(cells["n"].unique())
    table = cells.pivot_table(index="k", columns="n", values=value, aggfunc="mean")
    return table.reindex(index=ks, columns=ns)


def bias_provenance(cells: pd.DataFrame, value: str = "relearned_bias") -> List[Dict]:
    return [
        {"k": int(k), "n": int(n), "mean": float(group[value].mean()), "cells": sorted(group["cell_id"])}
        for (k, n), group in cells.groupby(["k", "n"])
    ]


def comparison_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows])


def significance_table(
    cells: pd.DataFrame,
    compare: Tuple[int, int] = (1, 5),
    iterations: int = 10000,
    seed: int = 0,
    value: str = "relearned_bias",
) -> pd.DataFrame:
    """
    One row per dimension comparing two adversary counts across seeds

    The Bonferroni factor is the number of dimensions compared.
    """
    first, second = compare
    usable = []
    for k, group in cells.groupby("k"):
        a = group.loc[group["n"] == first]
        b = group.loc[group["n"] == second]
        if len(a) and len(b):
            usable.append((k, a, b))
        else:
            logger.warning(f"Significance row for k={k} skipped: missing n={first} or n={second} cells")
    rows = []
    for k, a, b in usable:
        samples = SampleSet(a[value].tolist(), b[value].tolist(), (f"n{first}", f"n{second}"))
        row = compare_groups(samples, label=str(k), factor=len(usable), iterations=iterations, seed=seed).to_dict()
        row["dimension"] = int(k)
        row["cells"] = _cells(pd.concat([a, b]))
        rows.append(row)
    if not rows:
        return pd.DataFrame()
    table = pd.DataFrame(rows).drop(columns=["label"])
    return table[["dimension"] + [c for c in table.columns if c != "dimension"]]


def corpus_delta_table(corpora: pd.DataFrame) -> pd.DataFrame:
    """
    Task accuracy of the n = 0 baseline and deltas of every n > 0, per dimension
    and evaluation corpus, with an Average row per dimension
    """
    frames = []
    for k, group in corpora.groupby("k"):
        means = group.pivot_table(index="corpus", columns="n", values="accuracy", aggfunc="mean")
        if 0 not in means.columns:
            logger.warning(f"No n=0 baseline for k={k}; corpus deltas skipped")
            continue
        table = pd.DataFrame({"baseline": means[0]})
        for n in [c for c in means.columns if c != 0]:
            table[f"n={n}"] = means[n] - means[0]
        table.loc["Average"] = table.mean(axis=0)
        table["cells"] = [
            _cells(group.loc[group["corpus"] == corpus]) if corpus != "Average" else _cells(group.drop_duplicates("cell_id"))
            for corpus in table.index
        ]
        table.insert(0, "k", int(k))
        frames.append(table.rename_axis("corpus").reset_index())
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def hard_subset_significance(cells: pd.DataFrame, iterations: int = 10000, seed: int = 0) -> pd.DataFrame:
    """Bootstrap test that each n > 0 beats the n = 0 baseline on the hard subset"""
    rows = []
    usable = cells.dropna(subset=["task_hard"])
    for k, group in usable.groupby("k"):
        baseline = group.loc[group["n"] == 0]
        if baseline.empty:
            continue
        for n, debiased in group.loc[group["n"] > 0].groupby("n"):
            result = bootstrap_test(debiased["task_hard"], baseline["task_hard"], iterations=iterations, seed=seed)
            rows.append(
                {
                    "k": int(k),
                    "n": int(n),
                    "baseline_mean": float(baseline["task_hard"].mean()),
                    "debiased_mean": float(debiased["task_hard"].mean()),
                    "b_p": result.p_value,
                    "cells": _cells(pd.concat([baseline, debiased])),
                }
            )
    return pd.DataFrame(rows)


def during_vs_relearned(cells: pd.DataFrame) -> pd.DataFrame:
    columns = ["task_test", "during_training_bias", "relearned_bias"]
    summary = cells.groupby(["k", "n"])[columns].mean()
    summary["cells"] = cells.groupby(["k", "n"])["cell_id"].apply(lambda ids: ";".join(sorted(ids)))
    return summary


def build_report(
    output_dir,
    compare: Tuple[int, int] = (1, 5),
    iterations: int = 10000,
    seed: int = 0,
) -> Dict[str, Path]:
    """
    Write every report table, a text report, figures and a provenance summary

    Returns:
        mapping of artifact name to path
    """
    output_dir = Path(output_dir)
    reports = output_dir / "reports"
    records = load_records(output_dir)
    cells = cell_frame(records)
    corpora = corpus_frame(records)

    tables = {
        "bias_table": bias_table(cells),
        "significance": significance_table(cells, compare, iterations, seed),
        "corpus_deltas": corpus_delta_table(corpora),
        "hard_significance": hard_subset_significance(cells, iterations, seed),
        "during_vs_relearned": during_vs_relearned(cells),
    }
    written = {}
    for name, table in tables.items():
        written[name] = export_csv(table, reports / f"{name}.csv", index=name in ("bias_table", "during_vs_relearned"))
    for column in [c for c in cells.columns if c.startswith("relearned_") and c != "relearned_bias"]:
        head = column[len("relearned_") :]
        written[f"bias_table_{head}"] = export_csv(bias_table(cells, column), reports / f"bias_table_{head}.csv")

    sections = {
        "Relearned bias (max probe accuracy), rows k, columns n": tables["bias_table"],
        f"Significance: n={compare[0]} vs n={compare[1]}": tables["significance"].drop(columns=["cells"], errors="ignore"),
        "Task accuracy deltas vs n=0": tables["corpus_deltas"].drop(columns=["cells"], errors="ignore"),
        "Hard subset: debiased vs baseline": tables["hard_significance"].drop(columns=["cells"], errors="ignore"),
        "During training vs relearned": tables["during_vs_relearned"].drop(columns=["cells"], errors="ignore"),
    }
    ledger = RunLedger(reports / "ledger.db") if (reports / "ledger.db").exists() else None
    if ledger is not None:
        sections["Cell status"] = pd.DataFrame(ledger.cells(), columns=CELL_COLUMNS)[["cell_id", "status", "error"]]
    written["report"] = write_text_report(sections, reports / "report.txt", title=f"Report for {output_dir}")

    box = plot_relearned_box(cells, reports / "relearned_bias.html")
    bars = plot_during_vs_relearned(tables["during_vs_relearned"], reports / "during_vs_relearned.html")
    written.update({k: v for k, v in (("relearned_figure", box), ("during_figure", bars)) if v is not None})

    summary = {
        "cells": {
            r["cell_id"]: {"record": str(output_dir / "cells" / f"{r['cell_id']}.json"), "checkpoint_id": r["checkpoint"]["id"]}
            for r in records
        },
        "bias_table": bias_provenance(cells),
        "significance": tables["significance"].to_dict(orient="records"),
        "corpus_deltas": tables["corpus_deltas"].to_dict(orient="records"),
        "hard_significance": tables["hard_significance"].to_dict(orient="records"),
        "during_vs_relearned": tables["during_vs_relearned"].reset_index().to_dict(orient="records"),
        "ledger_events": ledger.events(limit=500) if ledger is not None else [],
    }
    written["summary"] = write_json(reports / "summary.json", _nan_to_none(summary))
    logger.info(f"Report for {len(records)} cells written to {reports}")
    return written


def _nan_to_none(data):
    if isinstance(data, dict):
        return {k: _nan_to_none(v) for k, v in data.items()}
    if isinstance(data, list):
        return [_nan_to_none(v) for v in data]
    if isinstance(data, (float, np.floating)) and not np.isfinite(data):
        return None
    return data


def stats_text(rows) -> str:
    """Human-readable significance table for the stats subcommand"""
    return create_text_report({"Significance": comparison_frame(rows)}, title="Significance tests")
