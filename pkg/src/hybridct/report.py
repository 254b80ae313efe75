"""Render evaluation reports: metric tables, confusion-matrix and ROC figures."""
from __future__ import annotations

import json
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import RenderError  # noqa: E402
from .evaluation import EvalReport  # noqa: E402

CLASS_NAMES = {"COVID": "COVID", "NONCOVID": "non-COVID"}


def pct(x: float) -> str:
    """Fraction -> percentage with two decimals, rounding half up."""
    return str(Decimal(repr(round(x * 100.0, 9))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def summary_row(report: EvalReport) -> str:
    w = report.weighted
    return " / ".join(pct(v) for v in (report.accuracy, w["precision"], w["recall"], w["f1"]))


def performance_table(reports) -> str:
    """Accuracy and weighted averages, one row per model."""
    rows = [("Model", "Accuracy", "Precision (Weighted Avg)", "Recall (Weighted Avg)", "F1 (Weighted Avg)")]
    for r in reports:
        w = r.weighted
        rows.append((r.name, pct(r.accuracy) + "%", pct(w["precision"]) + "%",
                     pct(w["recall"]) + "%", pct(w["f1"]) + "%"))
    return _format(rows)


def class_table(reports) -> str:
    rows = [("Model", "Class", "Precision", "Recall", "F1 Score", "Support")]
    for r in reports:
        for i, c in enumerate(r.per_class):
            rows.append((r.name if i == 0 else "", CLASS_NAMES.get(c.label, c.label),
                         pct(c.precision) + "%", pct(c.recall) + "%", pct(c.f1) + "%", str(c.support)))
    return _format(rows)


def _format(rows) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def plot_confusion(ax, report: EvalReport):
    grid = report.confusion.as_grid()
    ax.imshow(grid, cmap="Blues")
    labels = ["COVID", "non-COVID"]
    ax.set_xticks([0, 1], labels)
    ax.set_yticks([0, 1], labels)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    ax.set_title(report.name)
    vmax = grid.max() or 1
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(grid[i, j]), ha="center", va="center",
                    color="white" if grid[i, j] > vmax / 2 else "black")


def plot_roc(ax, report: EvalReport):
    fpr = [p.fpr for p in report.roc]
    tpr = [p.tpr for p in report.roc]
    ax.plot(fpr, tpr, label=f"{report.name} (AUC = {report.auc:.3f})")


def _finish_roc(ax):
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("False Positive Rate")
    ax.set_ylabel("True Positive Rate")
    ax.legend(loc="lower right")


def render_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """Write metrics.txt, report.json, confusion.png and roc.png into ``out_dir``."""
    if not report.roc:
        raise RenderError(f"report {report.name!r} has no ROC points to plot")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "table": out / "metrics.txt",
            "json": out / "report.json",
            "confusion": out / "confusion.png",
            "roc": out / "roc.png",
        }
        c = report.confusion
        files["table"].write_text(
            performance_table([report]) + "\n" + class_table([report]) + "\n"
            + f"Confusion (COVID positive): TP={c.tp} FP={c.fp} FN={c.fn} TN={c.tn}\n"
            + f"AUC: {report.auc:.4f}\n",
            encoding="utf-8",
        )
        files["json"].write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")

        fig, ax = plt.subplots(figsize=(4, 4))
        plot_confusion(ax, report)
        fig.tight_layout()
        fig.savefig(files["confusion"], dpi=120)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(5, 5))
        plot_roc(ax, report)
        _finish_roc(ax)
        fig.tight_layout()
        fig.savefig(files["roc"], dpi=120)
        plt.close(fig)
    except OSError as exc:
        raise RenderError(f"cannot write report to {out}: {exc}") from exc
    return files


def render_comparison(reports, out_dir) -> dict[str, Path]:
    """Side-by-side tables, a confusion-matrix grid and overlaid ROC curves."""
    reports = list(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "performance": out / "performance_table.txt",
        "classwise": out / "classwise_table.txt",
        "confusion": out / "confusion_matrices.png",
        "roc": out / "roc_curves.png",
    }
    files["performance"].write_text(performance_table(reports), encoding="utf-8")
    files["classwise"].write_text(class_table(reports), encoding="utf-8")

    fig, axes = plt.subplots(1, len(reports), figsize=(4 * len(reports), 4), squeeze=False)
    for ax, r in zip(axes[0], reports):
        plot_confusion(ax, r)
    fig.tight_layout()
    fig.savefig(files["confusion"], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 6))
    for r in reports:
        if r.roc:
            plot_roc(ax, r)
    _finish_roc(ax)
    fig.tight_layout()
    fig.savefig(files["roc"], dpi=120)
    plt.close(fig)
    return files


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
