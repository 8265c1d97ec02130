"""Bit-stable CSV tables and deterministic SVG figures.

CSV: fixed six-decimal floats, LF line endings, minimal RFC 4180 quoting.
SVG: rendered with matplotlib's SVG backend with a fixed hash salt, text
kept as text and no creation date, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

logger = logging.getLogger(__name__)

_RC = {
    "svg.hashsalt": "forumcast",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
PALETTE = ("#1b6ca8", "#d1495b", "#edae49", "#00798c", "#66a182", "#8d96a3")


def fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        out = f"{value:.6f}"
        return "0.000000" if out == "-0.000000" else out
    if hasattr(value, "isoformat"):
        return value.isoformat()
    if hasattr(value, "item"):
        return fmt(value.item())
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_dict_rows(path, rows: Sequence[dict], header: Sequence[str] | None = None) -> Path:
    header = list(header or (rows[0].keys() if rows else []))
    return write_csv(path, header, ([r[k] for k in header] for r in rows))


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "forumcast"})
    return path


def _render(draw, path, width=7.0, height=3.2) -> Path:
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(width, height), layout="constrained")
        ax = fig.add_subplot()
        draw(fig, ax)
        return _save(fig, path)


def write_predictions(path, dates, actual, predicted, rpe) -> Path:
    if len(dates) == 0:
        logger.warning("no predictions to write; %s has only a header", path)
    return write_csv(path, ["date", "actual", "predicted", "rpe"], zip(dates, actual, predicted, rpe))


def plot_predictions(path, dates, actual, predicted, title="") -> Path | None:
    """Actual vs predicted close over the test period."""
    if len(dates) == 0:
        logger.warning("empty prediction set; no figure written")
        return None

    def draw(fig, ax):
        x = range(len(dates))
        ax.plot(x, actual, color=PALETTE[0], lw=1.4, label="actual")
        ax.plot(x, predicted, color=PALETTE[1], lw=1.2, ls="--", label="predicted")
        _date_ticks(ax, dates)
        ax.set_ylabel("close")
        ax.set_title(title)
        ax.legend(frameon=False)

    return _render(draw, path)


def plot_rpe(path, dates, rpe, title="") -> Path | None:
    """Signed relative percentage error per test date."""
    if len(dates) == 0:
        logger.warning("empty prediction set; no figure written")
        return None

    def draw(fig, ax):
        x = range(len(dates))
        colors = [PALETTE[1] if v > 0 else PALETTE[0] for v in rpe]
        ax.bar(x, rpe, color=colors, width=0.8)
        ax.axhline(0.0, color="black", lw=0.6)
        _date_ticks(ax, dates)
        ax.set_ylabel("RPE (%)")
        ax.set_title(title)

    return _render(draw, path)


def plot_series(path, dates, series: dict, title="") -> Path | None:
    if not dates:
        return None

    def draw(fig, ax):
        x = range(len(dates))
        for k, (name, values) in enumerate(series.items()):
            ax.plot(x, values, lw=0.9, color=PALETTE[k % len(PALETTE)], label=name)
        _date_ticks(ax, dates)
        ax.set_title(title)
        ax.legend(frameon=False, ncol=3, fontsize=7)

    return _render(draw, path)


def plot_ablation(path, table, metric="rmse") -> Path:
    """Grouped bars of improvement ratios vs the BiLSTM baseline per window."""
    rows = list(table.metrics)

    def draw(fig, ax):
        n = len(rows)
        width = 0.8 / n
        for k, row in enumerate(rows):
            vals = [table.ratio(row, w, metric) for w in table.windows]
            xs = [i + (k - (n - 1) / 2) * width for i in range(len(table.windows))]
            ax.bar(xs, vals, width=width, color=PALETTE[k % len(PALETTE)], label=row)
        ax.axhline(1.0, color="black", lw=0.6)
        ax.set_xticks(range(len(table.windows)), [f"window {w}" for w in table.windows])
        ax.set_ylabel(f"{metric.upper()} ratio (>1 is better)")
        ax.legend(frameon=False, ncol=len(rows), fontsize=7)

    return _render(draw, path)


def plot_abs_errors(path, errors: dict, title="") -> Path | None:
    """Box plot of absolute prediction errors per model."""
    if not errors or not any(len(v) for v in errors.values()):
        return None

    def draw(fig, ax):
        names = list(errors)
        ax.boxplot([errors[n] for n in names], tick_labels=names)
        ax.set_ylabel("|actual - predicted|")
        ax.set_title(title)

    return _render(draw, path)


def _date_ticks(ax, dates, max_ticks=6):
    n = len(dates)
    step = max(1, math.ceil(n / max_ticks))
    idx = list(range(0, n, step))
    ax.set_xticks(idx, [fmt(dates[i]) for i in idx], rotation=0)
