"""Figures written next to the CSV reports, plus the heatmap overlay.

The overlay is built with plain numpy so its bytes are stable: five color
stops (black, blue, green, yellow, red at 0, .25, .5, .75, 1), linear
interpolation, rounding half up, then an even 50/50 blend with the 8-bit
input (``(heat + img + 1) // 2``).  Fixations are drawn as red crosses.
"""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image as PILImage  # noqa: E402

from .imaging import fixation_to_pixel, quantize8, to_rgb  # noqa: E402

HEAT_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
HEAT_COLORS = np.array(
    [[0, 0, 0], [0, 0, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]], dtype=np.float64
)
CROSS_COLOR = (255, 0, 0)
PNG_META = {"Software": None}


def heat_colors(field: np.ndarray) -> np.ndarray:
    v = np.clip(field, 0.0, 1.0)
    rgb = np.stack([np.interp(v, HEAT_STOPS, HEAT_COLORS[:, ch]) for ch in range(3)], axis=-1)
    return np.floor(rgb + 0.5).astype(np.uint8)


def overlay_heatmap(image: np.ndarray, field: np.ndarray, fixations=()) -> np.ndarray:
    img8 = quantize8(to_rgb(image)).astype(np.uint16)
    out = ((heat_colors(field).astype(np.uint16) + img8 + 1) // 2).astype(np.uint8)
    h, w = field.shape
    arm = max(2, int(round(0.03 * min(h, w))))
    for f in fixations:
        c = int(np.floor(fixation_to_pixel(f.x, w) + 0.5))
        r = int(np.floor(fixation_to_pixel(f.y, h) + 0.5))
        if 0 <= r < h:
            out[r, max(c - arm, 0) : min(c + arm + 1, w)] = CROSS_COLOR
        if 0 <= c < w:
            out[max(r - arm, 0) : min(r + arm + 1, h), c] = CROSS_COLOR
    return out


def save_overlay(image, field, fixations, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    PILImage.fromarray(overlay_heatmap(image, field, fixations)).save(tmp, format="PNG")
    os.replace(tmp, path)


def _savefig(fig, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", dpi=120, metadata=PNG_META)
    plt.close(fig)
    os.replace(tmp, path)


def plot_curves(curves: dict, path, title: str = "") -> None:
    """Mean probability curves, one line per name (e.g. delete / insert)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (fractions, probs) in sorted(curves.items()):
        ax.plot(fractions, probs, label=name)
    ax.set_xlabel("fraction of pixels")
    ax.set_ylabel("target probability")
    ax.set_xlim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    _savefig(fig, path)


def plot_sweep(rows, path) -> None:
    """Grid of small panels: one row per metric, one column per parameter."""
    params = sorted({r["parameter"] for r in rows})
    metrics = sorted({r["metric"] for r in rows})
    if not params or not metrics:
        return
    fig, axes = plt.subplots(
        len(metrics), len(params), figsize=(2.4 * len(params), 1.9 * len(metrics)), squeeze=False
    )
    for i, metric in enumerate(metrics):
        for j, param in enumerate(params):
            ax = axes[i][j]
            pts = [r for r in rows if r["parameter"] == param and r["metric"] == metric]
            labels = [str(r["value"]) for r in pts]
            ys = [np.nan if r["mean"] is None else r["mean"] for r in pts]
            ax.plot(range(len(pts)), ys, marker="o")
            ax.set_xticks(range(len(pts)))
            ax.set_xticklabels(labels, fontsize=7, rotation=30)
            if i == 0:
                ax.set_title(param, fontsize=9)
            if j == 0:
                ax.set_ylabel(metric, fontsize=9)
            ax.tick_params(labelsize=7)
    fig.tight_layout()
    _savefig(fig, path)
