"""Faithfulness, localization and gaze-correlation scores for attribution maps.

* avg % drop / avg % increase: confidence change when the input is
  multiplied by the map.
* delete / insert: target probability while pixels are removed from, or
  restored into, the image in map-rank order; summarized by trapezoidal AUC.
* EBPG: share of map energy inside a bounding box.
* NSS / AUC-Judd: agreement with human fixation points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import UndefinedMetricError
from .imaging import BBox, as_image, blur

logger = logging.getLogger(__name__)

DEFAULT_STEP_FRACTION = 0.02


def _field(emap) -> np.ndarray:
    return np.asarray(getattr(emap, "field", emap), dtype=np.float64)


def _target_prob(predictor, image, target) -> float:
    return float(predictor.predict(image).probabilities[target])


@dataclass(frozen=True)
class Curve:
    fractions: np.ndarray
    probabilities: np.ndarray

    def auc(self) -> float:
        return trapezoid_auc(self.fractions, self.probabilities)


def trapezoid_auc(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0))


# -- confidence drop / increase ---------------------------------------------


def masked_input(image, emap) -> np.ndarray:
    return as_image(image) * _field(emap)[:, :, None]


def drop_and_increase(predictor, image, emap, target):
    """Per-image ``(p_full, p_masked)`` pair."""
    image = as_image(image)
    return _target_prob(predictor, image, target), _target_prob(predictor, masked_input(image, emap), target)


def pct_drop(p_full: float, p_masked: float) -> float:
    return 100.0 * max(0.0, p_full - p_masked) / p_full


def avg_pct_drop(predictor, images, maps, targets) -> float:
    """Mean relative confidence drop in percent; images with ``p_full = 0`` are skipped."""
    drops = []
    for i, (img, emap, t) in enumerate(zip(images, maps, targets)):
        p_full, p_masked = drop_and_increase(predictor, img, emap, t)
        if p_full == 0.0:
            logger.warning("skipping image %d: target probability is zero on the full input", i)
            continue
        drops.append(pct_drop(p_full, p_masked))
    if not drops:
        raise UndefinedMetricError("no image with non-zero target probability")
    return float(np.mean(drops))


def avg_pct_increase(predictor, images, maps, targets) -> float:
    rises, n = 0, 0
    for img, emap, t in zip(images, maps, targets):
        p_full, p_masked = drop_and_increase(predictor, img, emap, t)
        rises += p_masked > p_full
        n += 1
    if n == 0:
        raise UndefinedMetricError("empty dataset")
    return 100.0 * rises / n


# -- deletion / insertion ---------------------------------------------------


def pixel_ranking(emap) -> np.ndarray:
    """Flat pixel indices by decreasing map value, ties in row-major order."""
    return np.argsort(-_field(emap).ravel(), kind="stable")


def _chunks(n_pixels: int, step_fraction: float):
    if not 0.0 < step_fraction <= 1.0:
        raise ValueError("step_fraction must lie in (0, 1]")
    per_step = max(1, math.ceil(step_fraction * n_pixels))
    return list(range(0, n_pixels, per_step)) + [n_pixels], per_step


def _sweep(predictor, start, source, emap, target, step_fraction):
    h, w, c = start.shape
    order = pixel_ranking(emap)
    bounds, _ = _chunks(h * w, step_fraction)
    current = start.reshape(h * w, c).copy()
    src = source.reshape(h * w, c)
    probs = [_target_prob(predictor, current.reshape(h, w, c), target)]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        idx = order[lo:hi]
        current[idx] = src[idx]
        probs.append(_target_prob(predictor, current.reshape(h, w, c), target))
    curve = Curve(np.array(bounds, dtype=np.float64) / (h * w), np.array(probs))
    return curve, curve.auc()


def deletion_curve(predictor, image, emap, target, step_fraction=DEFAULT_STEP_FRACTION):
    """Zero out pixels from most to least important; returns ``(Curve, auc)``."""
    image = as_image(image)
    return _sweep(predictor, image, np.zeros_like(image), emap, target, step_fraction)


def insertion_curve(predictor, image, emap, target, step_fraction=DEFAULT_STEP_FRACTION, kernel=None):
    """Restore original pixels into a blurred canvas in map-rank order."""
    image = as_image(image)
    if kernel is None:
        from .foveation import FovexConfig

        kernel = FovexConfig().blur_kernel()
    return _sweep(predictor, blur(image, kernel), image, emap, target, step_fraction)


# -- localization -----------------------------------------------------------


def ebpg(emap, bbox: BBox) -> float:
    e = _field(emap)
    if not bbox.intersects(e.shape):
        raise ValueError(f"bbox {bbox} does not intersect the {e.shape} map")
    total = e.sum()
    if total == 0.0:
        raise UndefinedMetricError("EBPG is undefined for an all-zero map")
    rows, cols = bbox.slices(e.shape)
    return float(100.0 * e[rows, cols].sum() / total)


# -- gaze correlation -------------------------------------------------------


def fixation_mask(points, shape) -> np.ndarray:
    """Binary fixation map from ``(x, y)`` pixel coordinates."""
    mask = np.zeros(tuple(shape[:2]), dtype=bool)
    for x, y in points:
        r, c = int(round(y)), int(round(x))
        if not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise ValueError(f"fixation ({x}, {y}) outside the {shape[:2]} grid")
        mask[r, c] = True
    return mask


@dataclass
class GazeData:
    fixations: Sequence = ()
    attention_map: Optional[np.ndarray] = None

    def mask(self, shape) -> np.ndarray:
        m = fixation_mask(self.fixations, shape)
        if not m.any():
            raise ValueError("gaze data holds no fixation")
        return m


def _gaze_mask(gaze, shape):
    if isinstance(gaze, GazeData):
        return gaze.mask(shape)
    m = np.asarray(gaze)
    if m.dtype == bool and m.shape == tuple(shape):
        return m
    return GazeData(list(gaze)).mask(shape)


def nss(emap, gaze) -> float:
    e = _field(emap)
    mask = _gaze_mask(gaze, e.shape)
    sd = e.std()
    if sd == 0.0:
        return 0.0
    return float(((e - e.mean()) / sd)[mask].mean())


def aucj(emap, gaze) -> float:
    """ROC area with fixated pixels as positives, thresholds at their values.

    A negative pixel tied with a threshold counts as above it, as in Judd's
    reference code, so a constant map scores 0.5.
    """
    e = _field(emap)
    mask = _gaze_mask(gaze, e.shape)
    pos = e[mask]
    neg = e[~mask]
    if neg.size == 0:
        raise UndefinedMetricError("AUC-Judd needs at least one non-fixated pixel")
    thresholds = np.unique(pos)[::-1]
    neg_sorted = np.sort(neg)
    pos_sorted = np.sort(pos)
    tpr = (pos.size - np.searchsorted(pos_sorted, thresholds, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size
    xs = np.concatenate([[0.0], fpr, [1.0]])
    ys = np.concatenate([[0.0], tpr, [1.0]])
    return trapezoid_auc(xs, ys)


# -- aggregate report -------------------------------------------------------


@dataclass
class FaithfulnessReport:
    avg_pct_drop: float
    avg_pct_increase: float
    delete_auc: float
    insert_auc: float
    rows: List[dict] = field(default_factory=list)


def faithfulness_report(predictor, images, maps, targets, step_fraction=DEFAULT_STEP_FRACTION, kernel=None):
    rows = []
    for img, emap, t in zip(images, maps, targets):
        p_full, p_masked = drop_and_increase(predictor, img, emap, t)
        rows.append(
            {
                "p_full": p_full,
                "p_masked": p_masked,
                "pct_drop": pct_drop(p_full, p_masked) if p_full > 0 else float("nan"),
                "increase": float(p_masked > p_full),
                "delete_auc": deletion_curve(predictor, img, emap, t, step_fraction)[1],
                "insert_auc": insertion_curve(predictor, img, emap, t, step_fraction, kernel)[1],
            }
        )
    if not rows:
        raise UndefinedMetricError("empty dataset")
    drops = [r["pct_drop"] for r in rows if not math.isnan(r["pct_drop"])]
    return FaithfulnessReport(
        avg_pct_drop=float(np.mean(drops)) if drops else float("nan"),
        avg_pct_increase=100.0 * float(np.mean([r["increase"] for r in rows])),
        delete_auc=float(np.mean([r["delete_auc"] for r in rows])),
        insert_auc=float(np.mean([r["insert_auc"] for r in rows])),
        rows=rows,
    )
