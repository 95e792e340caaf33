"""Pipeline-report rendering: console text and figure files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import PipelineReport  # noqa: E402
from .similarity import ScoredPair  # noqa: E402

_STAGE_LABELS = [
    ("succeeded", "succeeded"),
    ("infeasible", "infeasible"),
    ("parse_failed_final", "parse failed"),
    ("render_failed_final", "render failed"),
    ("validator_failed_final", "validator failed"),
]


def load_report(path: str | Path) -> PipelineReport:
    return PipelineReport.from_json(json.loads(Path(path).read_text()))


def format_report(report: PipelineReport) -> str:
    lines = [f"seeds processed: {report.seeds}"]
    for field, label in _STAGE_LABELS:
        value = getattr(report, field)
        pct = 100.0 * value / report.seeds if report.seeds else 0.0
        lines.append(f"  {label:<17}{value:>8}  ({pct:.2f}%)")
    lines.append("retry histogram (attempts -> samples):")
    for attempts in sorted(report.retry_histogram):
        lines.append(f"  {attempts}: {report.retry_histogram[attempts]}")
    lines.append("accounting closure: " + ("ok" if report.closed() else "VIOLATED"))
    return "\n".join(lines)


def render_report_figures(report: PipelineReport, out_dir: str | Path) -> list[Path]:
    """Write stage-outcome and retry-histogram figures; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    labels = [label for _, label in _STAGE_LABELS]
    values = [getattr(report, field) for field, _ in _STAGE_LABELS]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(labels, values, color="#4477aa")
    ax.set_ylabel("samples")
    ax.set_title(f"Stage outcomes over {report.seeds} seeds")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    path = out_dir / "stage_outcomes.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    attempts = sorted(report.retry_histogram)
    counts = [report.retry_histogram[a] for a in attempts]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.bar([str(a) for a in attempts], counts, color="#cc6677")
    ax.set_xlabel("modifier calls consumed")
    ax.set_ylabel("samples")
    ax.set_title("Retry histogram")
    fig.tight_layout()
    path = out_dir / "retry_histogram.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written


def render_score_histogram(entries: Sequence[ScoredPair], out_dir: str | Path) -> Path:
    """Similarity-total distribution for a scored-pair index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist([e.total for e in entries], bins=range(0, 105, 5), color="#117733")
    ax.set_xlabel("similarity total")
    ax.set_ylabel("pairs")
    ax.set_title(f"Similarity distribution ({len(entries)} pairs)")
    fig.tight_layout()
    path = out_dir / "similarity_distribution.png"
    fig.savefig(path)
    plt.close(fig)
    return path
