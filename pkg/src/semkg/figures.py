"""Matplotlib renderings saved next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import ClassificationReport, RankingOutcome, SweepRow
from .graph import KnowledgeGraph


def _save(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loss_curve(history: list[tuple[int, float, float]], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [h[0] for h in history]
    ax.plot(steps, [h[2] for h in history], lw=1.0, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("batch loss")
    ax.set_title("training loss")
    _save(fig, path)


def plot_rank_histogram(outcome: RankingOutcome, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(outcome.ranks, bins=30, color="tab:blue", edgecolor="white")
    ax.set_xlabel("filtered rank")
    ax.set_ylabel("queries")
    ax.set_title(f"MR {outcome.mr:.2f}, MRR {outcome.mrr:.3f}")
    _save(fig, path)


def plot_error_breakdown(report: ClassificationReport, g: KnowledgeGraph,
                         path: str, top: int = 12) -> None:
    ordered = sorted(report.per_relation_errors.items(),
                     key=lambda item: (-item[1], item[0]))[:top]
    fig, ax = plt.subplots(figsize=(6, 4))
    if ordered:
        names = [g.relations[rel] for rel, _ in ordered]
        shares = [share for _, share in ordered]
        ax.barh(range(len(names)), shares, color="tab:red")
        ax.set_yticks(range(len(names)), names)
        ax.invert_yaxis()
    ax.set_xlabel("share of errors")
    ax.set_title(f"accuracy {report.accuracy:.3f}")
    _save(fig, path)


def plot_sweep_curve(rows: list[SweepRow], path: str) -> None:
    done = [(row.fraction, row.value) for row in rows if row.value is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    if done:
        xs, ys = zip(*sorted(done))
        ax.plot(xs, ys, marker="o", color="tab:blue")
    ax.set_xlabel("training fraction")
    ax.set_ylabel("metric")
    ax.set_title("low-resource sweep")
    _save(fig, path)
