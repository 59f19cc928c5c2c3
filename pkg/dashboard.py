"""
Rendering of ablation reports: fixed-width table, key=value blocks and an
optional HTML bar chart.
"""

from pathlib import Path

import pandas as pd
import plotly.express as px

from utils import format_rate, get_logger

logger = get_logger(__name__)

RATE_COLUMNS = ["WER", "NE-WER", "NE-WER_rare", "NE-WER_oov"]
COUNT_COLUMNS = ["E_NE", "N_NE"]


def report_frame(report):
    """
    One DataFrame row per system.

    Args:
        report: AblationReport

    Returns:
        pd.DataFrame: row, system, parent and the metric columns; undefined
        rates are NaN
    """
    records = []
    for row in report.rows:
        record = {"row": row.number, "system": row.label, "parent": row.parent}
        record.update(row.values)
        records.append(record)
    columns = ["row", "system", "parent"] + RATE_COLUMNS + COUNT_COLUMNS
    df = pd.DataFrame.from_records(records, columns=columns)
    df[RATE_COLUMNS] = df[RATE_COLUMNS].astype(float)
    return df


def _rate(value):
    return format_rate(None if pd.isna(value) else value, 2)


def _parent(value):
    return "-" if pd.isna(value) else str(int(value))


def format_table(report):
    df = report_frame(report)
    formatters = {column: _rate for column in RATE_COLUMNS}
    formatters["parent"] = _parent
    return df.to_string(index=False, formatters=formatters, justify="right")


def format_blocks(report):
    """key=value lines, one blank-line separated block per row."""
    blocks = []
    for row in report.rows:
        lines = [f"row={row.number}", f"system={row.key}", f"parent={row.parent or '-'}"]
        for key, value in row.values.items():
            lines.append(f"{key}={value if key in COUNT_COLUMNS else format_rate(value, 2)}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def format_ablation(report):
    """Complete text report: table, blank line, key=value blocks."""
    return format_table(report) + "\n\n" + format_blocks(report) + "\n"


def write_ablation_chart(report, path):
    """
    Grouped bar chart of the error rates of every system.

    Args:
        report: AblationReport
        path: Output HTML file (plotly.js is embedded)
    """
    df = report_frame(report)
    df["system"] = df["row"].astype(str) + ". " + df["system"]
    long = df.melt(id_vars=["system"], value_vars=RATE_COLUMNS, var_name="metric", value_name="rate")
    fig = px.bar(
        long.dropna(subset=["rate"]),
        x="system",
        y="rate",
        color="metric",
        barmode="group",
        title="Error rates along the ablation ladder",
        labels={"rate": "Error rate (%)", "system": ""},
    )
    fig.update_layout(xaxis_tickangle=-30, legend_title_text="")
    fig.write_html(str(path))
    logger.info(f"Wrote ablation chart to {Path(path)}")
    return fig
