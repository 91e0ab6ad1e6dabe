"""PNG output: ROC curves, heat-map overlays and HSI flow images."""

from __future__ import annotations

import logging
import re
from pathlib import Path

import cv2
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from ..flow import FlowImage  # noqa: E402
from .metrics import roc_auc, roc_curve  # noqa: E402

logger = logging.getLogger(__name__)

# pinned so plots regenerate byte-identically
STYLE = {
    "figure.figsize": (4.0, 4.0),
    "figure.dpi": 100,
    "font.size": 9,
    "font.family": "DejaVu Sans",
    "axes.grid": True,
    "path.simplify": False,
}


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "config"


def plot_roc(scores, labels, path, title: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fpr, tpr, _ = roc_curve(scores, labels)
    auc = roc_auc(scores, labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(fpr, tpr, color="tab:blue", lw=1.5, label=f"AUC = {auc:.3f}")
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
        plt.close(fig)
    return path


def heat_colors(values: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Black-red-yellow-white ramp; zero maps to black."""
    vmax = float(values.max()) if vmax is None else vmax
    x = np.clip(values / vmax, 0.0, 1.0) if vmax > 0 else np.zeros_like(values, dtype=np.float64)
    return np.stack([np.clip(3 * x, 0, 1), np.clip(3 * x - 1, 0, 1), np.clip(3 * x - 2, 0, 1)], axis=-1)


def heatmap_overlay(heat: np.ndarray, frame: np.ndarray | None = None, vmax: float | None = None) -> np.ndarray:
    """Heat colours alpha-blended over a frame, alpha = normalised heat."""
    rgb = heat_colors(heat, vmax)
    if frame is None:
        return rgb
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[:2] != heat.shape:
        frame = cv2.resize(frame, (heat.shape[1], heat.shape[0]), interpolation=cv2.INTER_LINEAR)
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    alpha = rgb.max(axis=-1, keepdims=True)
    return frame * (1.0 - alpha) + rgb * alpha


def save_rgb(path, rgb: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(path)
    return path


def save_flow_png(path, img: FlowImage) -> Path:
    return save_rgb(path, img.pixels)


def render_outputs(report, out_dir, heatmaps: dict | None = None, frames: dict | None = None,
                   flows: dict | None = None) -> list[Path]:
    """ROC plot per report series, overlays per clip heat map, PNG per flow image.

    ``heatmaps`` maps clip id to a list of HeatMap; ``frames`` optionally maps
    the same ids to frame arrays for the overlay background; ``flows`` maps a
    name to a FlowImage. Missing or unusable artifacts are skipped.
    """
    out_dir = Path(out_dir)
    written = []
    for name, series in report.series.items():
        try:
            written.append(plot_roc(series.scores, series.labels, out_dir / "roc" / f"{_slug(name)}.png", name))
        except Exception as exc:
            logger.warning("skipping ROC plot for %s: %s", name, exc)
    for clip_id, maps in (heatmaps or {}).items():
        if not maps:
            logger.warning("no heat maps for clip %s", clip_id)
            continue
        vmax = max(float(h.values.max()) for h in maps)
        clip_frames = (frames or {}).get(clip_id)
        for h in maps:
            bg = clip_frames[h.t] if clip_frames is not None and h.t < len(clip_frames) else None
            written.append(save_rgb(out_dir / "heatmaps" / _slug(clip_id) / f"{h.t}.png",
                                    heatmap_overlay(h.values, bg, vmax)))
    for name, img in (flows or {}).items():
        if img is None:
            logger.warning("missing flow image %s", name)
            continue
        written.append(save_flow_png(out_dir / "flows" / f"{_slug(name)}.png", img))
    return written
