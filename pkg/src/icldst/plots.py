"""Figure rendering for evaluation reports.

matplotlib is imported lazily with the Agg backend so headless runs and
figure-free runs pay nothing.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from .evaluate import EvalReport


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_error_breakdown(report: EvalReport, path: str | Path) -> Path:
    plt = _plt()
    kinds = ["ignore", "spurious", "wrong"]
    values = [report.error_counts.get(k, 0) for k in kinds]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(kinds, values, color=["#4c72b0", "#dd8452", "#55a868"])
    ax.set_ylabel("slot errors")
    ax.set_title(f"Error breakdown ({report.target_domain})")
    for x, v in enumerate(values):
        ax.text(x, v, str(v), ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_domain_influence(report: EvalReport, path: str | Path) -> Path:
    plt = _plt()
    items = sorted(report.domain_influence.items(), key=lambda kv: (-kv[1], kv[0]))
    domains = [k for k, _ in items] or ["(none)"]
    values = [v for _, v in items] or [0]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(domains, values, color="#4c72b0")
    ax.set_ylabel("retrieved example labels")
    ax.set_title(f"Source domains of retrieved examples (target: {report.target_domain})")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_report_figures(report: EvalReport, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return [
        save_error_breakdown(report, outdir / "error_breakdown.png"),
        save_domain_influence(report, outdir / "domain_influence.png"),
    ]


def save_ablation_figure(
    cells: Mapping[str, Mapping[str, float]],
    domains: Sequence[str],
    path: str | Path,
) -> Path:
    """Grouped bars: one group per domain, one bar per configuration."""
    plt = _plt()
    methods = list(cells)
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(7, 3.6))
    for offset, method in enumerate(methods):
        xs = [i + offset * width for i in range(len(domains))]
        ys = [100 * cells[method].get(d, 0.0) for d in domains]
        ax.bar(xs, ys, width=width, label=method)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(domains))])
    ax.set_xticklabels(domains)
    ax.set_ylabel("domain JGA (%)")
    ax.set_title("Retrieval ablation")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
