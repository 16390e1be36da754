"""Static PNG figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_loss(history: list[dict], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    if history:
        ep = [r["epoch"] for r in history]
        ax.plot(ep, [r["l_total"] for r in history], label="total")
        ax.plot(ep, [r["l_angle"] for r in history], label="angle")
        ax.plot(ep, [r["l_magnitude"] for r in history], label="magnitude")
        ax.set_yscale("log")
        ax.legend()
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    return _save(fig, path)


def plot_magnitude_scatter(pred: np.ndarray, truth: np.ndarray, path: str | Path) -> Path:
    p = np.linalg.norm(pred, axis=-1).ravel()
    t = np.linalg.norm(truth, axis=-1).ravel()
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(t, p, s=2, alpha=0.3)
    hi = float(max(t.max(initial=0), p.max(initial=0))) or 1.0
    ax.plot([0, hi], [0, hi], "k--", lw=0.8)
    ax.set_xlabel("reference |WSS| [Pa]")
    ax.set_ylabel("predicted |WSS| [Pa]")
    return _save(fig, path)


def plot_inflow_bins(rows: list[dict], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"{r['q_low']:.0f}-{r['q_high']:.0f}" for r in rows]
    ax.bar(labels, [r["nmae"] for r in rows])
    ax.set_xlabel("peak inflow bin [ml/s]")
    ax.set_ylabel("NMAE")
    return _save(fig, path)


def plot_trajectory(report: dict, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    a = report["amplitudes"]
    ax.plot(a, report["q1_tawss_true"], "o-", label="oracle")
    ax.plot(a, report["q1_tawss_pred"], "s--", label="model")
    ax.set_xlabel("bulge amplitude [mm]")
    ax.set_ylabel("Q1 TAWSS [Pa]")
    ax.legend()
    return _save(fig, path)


def plot_sensitivity(report: dict, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    labels = [f"{p['a']}x vs {p['b']}x" for p in report["pairs"]]
    ax.bar(labels, [p["nmae"] for p in report["pairs"]])
    ax.set_ylabel("pairwise NMAE")
    return _save(fig, path)


def plot_region_cosine(report: dict, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    keys = ["base", "extended_original", "extended_added"]
    ax.bar(["base", "ext. original", "ext. added"], [report[k]["cos_similarity"] for k in keys])
    ax.set_ylim(0, 1)
    ax.set_ylabel("cosine similarity")
    return _save(fig, path)
