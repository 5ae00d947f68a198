"""SVG figures, each written next to the CSV of the numbers it shows."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .scoring import ScoreReport, roc_auc, roc_points  # noqa: E402

# stable element ids and no timestamp, so identical data gives identical files
matplotlib.rcParams["svg.hashsalt"] = "dsab"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, table: pd.DataFrame, out_dir: Path, stem: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    svg, csv = out_dir / f"{stem}.svg", out_dir / f"{stem}.csv"
    fig.savefig(svg, format="svg", metadata=_SVG_META)
    plt.close(fig)
    table.to_csv(csv, index=False, lineterminator="\n", float_format="%.10g")
    return [svg, csv]


def score_histogram(report: ScoreReport, out_dir: str | Path, entity: str = "vehicle",
                    bins: int = 40) -> list[Path]:
    df = report.vehicles if entity == "vehicle" else report.scenes
    scores = np.log10(np.maximum(df.score.to_numpy(), 1e-300))
    edges = np.histogram_bin_edges(scores, bins=bins) if len(scores) else np.linspace(0, 1, bins + 1)
    rows = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for lab, name in ((0, "normal"), (1, "abnormal")):
        counts, _ = np.histogram(scores[df.label.to_numpy() == lab], bins=edges)
        rows.append(pd.DataFrame({"label": lab, "bin_lo": edges[:-1], "bin_hi": edges[1:],
                                  "count": counts}))
        ax.stairs(counts, edges, label=name, fill=lab == 0, alpha=0.6)
    ax.set_xlabel("log10 anomaly score")
    ax.set_ylabel(f"{entity}s")
    ax.set_yscale("symlog")
    ax.legend()
    return _save(fig, pd.concat(rows, ignore_index=True), Path(out_dir), f"{entity}_score_hist")


def roc_curve(report: ScoreReport, out_dir: str | Path, entity: str = "vehicle") -> list[Path]:
    df = report.vehicles if entity == "vehicle" else report.scenes
    fpr, tpr, thr = roc_points(df.score.to_numpy(), df.label.to_numpy())
    auc = roc_auc(df.score.to_numpy(), df.label.to_numpy())
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(fpr, tpr, drawstyle="steps-post", label=f"AUC {auc:.3f}")
    ax.plot([0, 1], [0, 1], ls=":", c="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    return _save(fig, pd.DataFrame({"fpr": fpr, "tpr": tpr, "threshold": thr}), Path(out_dir),
                 f"{entity}_roc")


def loss_curve(log: pd.DataFrame, out_dir: str | Path) -> list[Path]:
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in ("mean_loss", "lx", "lv", "la", "ll"):
        ax.plot(log.epoch, log[col], label=col)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss per window")
    ax.legend()
    return _save(fig, log[["epoch", "mean_loss", "lx", "lv", "la", "ll", "lr"]], Path(out_dir),
                 "loss_curve")


def sweep_curve(rows: pd.DataFrame, param: str, out_dir: str | Path) -> list[Path]:
    """``rows`` has one line per parameter value with columns value, auc, ap."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for col in ("auc", "ap"):
        ax.plot(rows.value, rows[col], marker="o", label=col)
    ax.set_xlabel(param)
    ax.set_ylabel("vehicle detection")
    ax.legend()
    return _save(fig, rows, Path(out_dir), f"sweep_{param}")
