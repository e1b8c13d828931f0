"""Evaluation reports: task metrics and inter-rater agreement.

Each report is written three ways under the output directory: a JSON
document, a CSV with one row per method/dimension, and a PNG bar chart of
the same numbers rendered with matplotlib.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .ingest import Vocabulary
from .metrics import (
    EmbeddingProvider,
    EmptyText,
    HashEmbeddingProvider,
    PredictionSet,
    RatingMatrix,
    cohen_kappa_pairwise_mean,
    embedding_score_f1,
    hamming_loss,
    krippendorff_alpha,
    rouge_l_f1,
    spearman_rho,
    top_k_accuracy,
    weighted_accuracy,
    weighted_f1,
)

TASK_COLUMNS = ("f1_w", "acc_w", "top_k_acc", "bert_score_f1", "rouge_l", "hamming_loss")

_DEFINITIONS = {
    "f1_w": "one-vs-rest F1 per label, averaged weighted by gold support",
    "acc_w": "one-vs-rest accuracy per label, averaged weighted by gold support",
    "top_k_acc": "fraction of statements whose top-k predictions intersect the gold set",
    "bert_score_f1": "greedy token-embedding matching F1 between predicted and gold label names",
    "rouge_l": "LCS-based F1 between predicted and gold label names",
    "hamming_loss": "fraction of (statement, label) cells assigned the wrong way",
}


@dataclass
class TaskRow:
    method: str
    f1_w: float
    acc_w: float
    top_k_acc: float
    bert_score_f1: Optional[float]
    rouge_l: Optional[float]
    hamming_loss: float
    statements: int


def _label_text(labels: Sequence[str], vocabulary: Vocabulary) -> str:
    names = [vocabulary.display_name(l) if l in vocabulary else l for l in sorted(labels)]
    return " ".join(names)


def task_metrics_row(
    method: str,
    preds: PredictionSet,
    vocabulary: Vocabulary,
    k: int = 10,
    provider: Optional[EmbeddingProvider] = None,
) -> TaskRow:
    """Score one prediction set.

    Text-similarity columns compare the display names of predicted labels
    against the display names of gold labels per statement; statements where
    either side is empty are skipped for those two columns (None when no
    statement is scorable).
    """
    provider = provider or HashEmbeddingProvider()
    labels = sorted(vocabulary.ids())
    rouge_scores: list[float] = []
    embed_scores: list[float] = []
    for item in preds:
        candidate = _label_text(sorted(item.predicted_labels()), vocabulary)
        reference = _label_text(sorted(item.gold), vocabulary)
        try:
            rouge_scores.append(rouge_l_f1(candidate, reference))
            embed_scores.append(embedding_score_f1(candidate, reference, provider))
        except EmptyText:
            continue
    return TaskRow(
        method=method,
        f1_w=weighted_f1(preds, labels),
        acc_w=weighted_accuracy(preds, labels),
        top_k_acc=top_k_accuracy(preds, k),
        bert_score_f1=sum(embed_scores) / len(embed_scores) if embed_scores else None,
        rouge_l=sum(rouge_scores) / len(rouge_scores) if rouge_scores else None,
        hamming_loss=hamming_loss(preds, labels),
        statements=len(preds),
    )


def write_task_report(
    rows: Sequence[TaskRow], out_dir: str | Path, k: int, figures: bool = True
) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "report": "task_metrics",
        "k": k,
        "definitions": _DEFINITIONS,
        "rows": [
            {
                "method": r.method,
                "f1_w": _round(r.f1_w),
                "acc_w": _round(r.acc_w),
                "top_k_acc": _round(r.top_k_acc),
                "bert_score_f1": _round(r.bert_score_f1),
                "rouge_l": _round(r.rouge_l),
                "hamming_loss": _round(r.hamming_loss),
                "statements": r.statements,
            }
            for r in rows
        ],
    }
    (out_dir / "task_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "task_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method",) + TASK_COLUMNS + ("statements",))
        for r in rows:
            writer.writerow(
                [r.method]
                + [_round(getattr(r, c)) for c in TASK_COLUMNS]
                + [r.statements]
            )
    if figures:
        _task_figure(rows, out_dir / "task_report.png")
    return report


def _task_figure(rows: Sequence[TaskRow], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, 4.5))
    columns = [c for c in TASK_COLUMNS if c != "hamming_loss"]
    width = 0.8 / max(len(rows), 1)
    xs = range(len(columns))
    for i, row in enumerate(rows):
        values = [getattr(row, c) or 0.0 for c in columns]
        ax.bar([x + i * width for x in xs], values, width=width, label=row.method)
    ax.set_xticks([x + width * (len(rows) - 1) / 2 for x in xs])
    ax.set_xticklabels(columns, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("Task metrics by method")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


IRR_COLUMNS = ("krippendorff_alpha", "kappa_unweighted", "kappa_linear", "kappa_quadratic", "spearman_rho")


@dataclass
class IrrRow:
    dimension: str
    krippendorff_alpha: float
    kappa_unweighted: float
    kappa_linear: float
    kappa_quadratic: float
    spearman_rho: float


def irr_row(dimension: str, ratings: RatingMatrix, alpha_level: str = "ordinal") -> IrrRow:
    """Agreement metrics for one rated quality dimension."""
    a, b = ratings.complete_pair()
    return IrrRow(
        dimension=dimension,
        krippendorff_alpha=krippendorff_alpha(ratings, alpha_level),
        kappa_unweighted=cohen_kappa_pairwise_mean(ratings, "unweighted"),
        kappa_linear=cohen_kappa_pairwise_mean(ratings, "linear"),
        kappa_quadratic=cohen_kappa_pairwise_mean(ratings, "quadratic"),
        spearman_rho=spearman_rho(a, b),
    )


def write_irr_report(
    rows: Sequence[IrrRow], out_dir: str | Path, alpha_level: str, figures: bool = True
) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "report": "inter_rater_reliability",
        "alpha_level": alpha_level,
        "rows": [
            {
                "dimension": r.dimension,
                "krippendorff_alpha": _round(r.krippendorff_alpha),
                "cohen_kappa": {
                    "unweighted": _round(r.kappa_unweighted),
                    "linear": _round(r.kappa_linear),
                    "quadratic": _round(r.kappa_quadratic),
                },
                "spearman_rho": _round(r.spearman_rho),
            }
            for r in rows
        ],
    }
    (out_dir / "irr_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "irr_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("dimension",) + IRR_COLUMNS)
        for r in rows:
            writer.writerow([r.dimension] + [_round(getattr(r, c)) for c in IRR_COLUMNS])
    if figures:
        _irr_figure(rows, out_dir / "irr_report.png")
    return report


def _irr_figure(rows: Sequence[IrrRow], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, 4.5))
    width = 0.8 / max(len(rows), 1)
    xs = range(len(IRR_COLUMNS))
    for i, row in enumerate(rows):
        values = [getattr(row, c) for c in IRR_COLUMNS]
        ax.bar([x + i * width for x in xs], values, width=width, label=row.dimension)
    ax.set_xticks([x + width * (len(rows) - 1) / 2 for x in xs])
    ax.set_xticklabels(IRR_COLUMNS, rotation=20, ha="right")
    ax.set_ylim(-1.0, 1.05)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("agreement")
    ax.set_title("Inter-rater agreement by dimension")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _round(value: Optional[float], digits: int = 6) -> Optional[float]:
    return None if value is None else round(value, digits)
