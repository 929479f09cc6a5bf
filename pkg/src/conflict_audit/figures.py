"""Static figures rendered from an audit report dict."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# No Software/date chunks, so reruns produce identical files.
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def calibration_map(calibration: Mapping, path: Path, title: str = "") -> Path:
    """Isotonic step map plus the identity line."""
    fig, ax = plt.subplots(figsize=(4, 4))
    bp = np.array(calibration["isotonic"]["breakpoints"], dtype=float).reshape(-1, 2)
    if len(bp):
        xs = np.append(bp[:, 0], 1.0)
        ys = np.append(bp[:, 1], bp[-1, 1])
        ax.step(xs, ys, where="post", label="isotonic")
    ax.plot([0, 1], [0, 1], ls="--", c="grey", lw=1, label="identity")
    ax.set(xlim=(0, 1), ylim=(0, 1), xlabel="raw confidence", ylabel="calibrated",
           title=f"{title} T={calibration['temperature']['T']:.2f}")
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)


def selective_curve(curves: Mapping[str, Sequence[Mapping]], path: Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for regime, pts in sorted(curves.items()):
        pts = [p for p in pts if p["accuracy"] is not None]
        ax.plot([p["coverage"] for p in pts], [p["accuracy"] for p in pts], marker="o", ms=3, label=regime)
    ax.set(xlabel="coverage", ylabel="accuracy", xlim=(0, 1.02), title=title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def confusion_heatmap(confusion: Mapping, path: Path, title: str = "") -> Path:
    labels = confusion["labels"]
    m = np.array(confusion["counts"])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(m, cmap="Blues")
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, str(m[i, j]), ha="center", va="center", fontsize=7)
    ax.set(xticks=range(len(labels)), yticks=range(len(labels)), xticklabels=labels, yticklabels=labels,
           xlabel="predicted", ylabel="gold", title=title)
    return _save(fig, path)


def vulnerability_heatmap(rows: Sequence[Mapping], path: Path) -> Path:
    models = sorted({r["model"] for r in rows})
    families = sorted({r["family"] for r in rows})
    grid = np.full((len(families), len(models)), np.nan)
    for r in rows:
        grid[families.index(r["family"]), models.index(r["model"])] = r["flip_pct"]
    fig, ax = plt.subplots(figsize=(1.2 * len(models) + 3, 0.5 * len(families) + 1.5))
    im = ax.imshow(grid, cmap="Reds", vmin=0, vmax=max(1.0, float(np.nanmax(grid)) if grid.size else 1.0))
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            if not np.isnan(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.1f}", ha="center", va="center", fontsize=7)
    ax.set(xticks=range(len(models)), yticks=range(len(families)), xticklabels=models, yticklabels=families)
    fig.colorbar(im, ax=ax, label="flip %")
    return _save(fig, path)


def delta_lb_bars(rows: Sequence[Mapping], path: Path) -> Path:
    rows = sorted(rows, key=lambda r: r["model"])
    fig, ax = plt.subplots(figsize=(0.9 * len(rows) + 2.5, 3.5))
    vals = [r["delta_lb_pp"] for r in rows]
    colors = ["tab:red" if r["p"] < 0.05 else "tab:grey" for r in rows]
    ax.bar(range(len(rows)), vals, color=colors)
    ax.axhline(0, c="black", lw=0.8)
    ax.set(xticks=range(len(rows)), ylabel="FI - FL (pp)")
    ax.set_xticklabels([r["model"] for r in rows], rotation=30, ha="right")
    return _save(fig, path)


def render_all(report: Mapping, out_dir: str | Path) -> list[Path]:
    """Every figure the report has data for; returns the written paths."""
    out_dir = Path(out_dir)
    written = []
    for model, frags in sorted(report.get("models", {}).items()):
        if "calibration" in frags:
            written.append(calibration_map(frags["calibration"], out_dir / f"calibration_{model}.png", model))
            written.append(selective_curve(frags["calibration"]["selective"], out_dir / f"selective_{model}.png",
                                           model))
        if "metrics" in frags:
            written.append(confusion_heatmap(frags["metrics"]["classification"]["confusion"],
                                             out_dir / f"confusion_{model}.png", model))
    pooled = report.get("pooled", {})
    if pooled.get("vulnerability", {}).get("rows"):
        written.append(vulnerability_heatmap(pooled["vulnerability"]["rows"], out_dir / "vulnerability.png"))
    if pooled.get("legitbias_table"):
        written.append(delta_lb_bars(pooled["legitbias_table"], out_dir / "delta_lb.png"))
    return written
