"""
Exporter utility for CSV tables, text reports and static HTML figures
Handles a missing plotting library gracefully
"""

import logging
from datetime import datetime
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

try:
    import plotly.express as px
    import plotly.graph_objects as go

    PLOTLY_AVAILABLE = True
except ImportError:
    PLOTLY_AVAILABLE = False
    logger.warning("plotly not available; figures will be skipped. Install it with: pip install plotly")


def export_csv(table: pd.DataFrame, path, index=True):
    """
    Write a table as CSV with a header row, '.' decimals and explicit gaps

    Args:
        table: DataFrame to export
        path: Output file
        index: Whether the index becomes the first column(s)

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=index, na_rep="NA", float_format="%.6g", decimal=".")
    logger.info(f"Wrote {path}")
    return path


def create_text_report(sections, title="Experiment Report"):
    """
    Create a plain-text report

    Args:
        sections: mapping of section title to DataFrame, dict, list or text
        title: Report title

    Returns:
        str: Formatted text report
    """
    report = ["=" * 60, title, "=" * 60, f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}", ""]
    for name, value in sections.items():
        report.append(name)
        report.append("-" * 40)
        if isinstance(value, pd.DataFrame):
            report.append(value.to_string(na_rep="NA", float_format=lambda x: f"{x:.4f}") if not value.empty else "(empty)")
        elif isinstance(value, dict):
            for key, sub_value in value.items():
                report.append(f"  {key}: {sub_value}")
        elif isinstance(value, (list, tuple)):
            for item in value:
                report.append(f"• {item}")
        else:
            report.append(str(value))
        report.append("")
    return "\n".join(report)


def write_text_report(sections, path, title="Experiment Report"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(create_text_report(sections, title), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def plot_relearned_box(cells: pd.DataFrame, path):
    """
    Box plot of relearned-bias maxima across seeds for every (k, n)

    Args:
        cells: one row per cell with columns k, n, relearned_bias
        path: Output HTML file

    Returns:
        Path, or None when plotly is unavailable or there is nothing to plot
    """
    if not PLOTLY_AVAILABLE or cells.empty:
        return None
    frame = cells.assign(k=cells["k"].astype(str), n=cells["n"].astype(str))
    fig = px.box(
        frame,
        x="n",
        y="relearned_bias",
        color="k",
        points="all",
        labels={"n": "adversaries", "relearned_bias": "max probe accuracy", "k": "dimension"},
        title="Relearned hypothesis-only bias",
    )
    return _write_html(fig, path)


def plot_during_vs_relearned(summary: pd.DataFrame, path):
    """
    Grouped bars of bias seen during training against bias relearned after freezing

    Args:
        summary: rows indexed by (k, n) with columns during_training_bias and relearned_bias
        path: Output HTML file
    """
    if not PLOTLY_AVAILABLE or summary.empty:
        return None
    labels = [f"k={k}, n={n}" for k, n in summary.index]
    fig = go.Figure()
    fig.add_bar(name="during training", x=labels, y=summary["during_training_bias"].tolist())
    fig.add_bar(name="relearned", x=labels, y=summary["relearned_bias"].tolist())
    fig.update_layout(barmode="group", title="Hypothesis-only bias: during training vs relearned", yaxis_title="accuracy")
    return _write_html(fig, path)


def _write_html(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    logger.info(f"Wrote {path}")
    return path
