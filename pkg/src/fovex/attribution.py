"""Attribution maps from scanpaths, the top-level explainer and a random baseline."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .foveation import Fixation, FovexConfig
from .imaging import as_image, blur, gaussian_blob, load_field16, min_max_normalize, save_field16
from .optimizer import Scanpath, default_target, generate_scanpath


@dataclass
class AttributionMap:
    field: np.ndarray
    fixations: tuple = ()
    alphas: tuple = ()
    target_class: Optional[int] = None
    provenance: dict = field(default_factory=dict)
    loss_gains: tuple = ()
    traces: list = field(default_factory=list, repr=False)

    @property
    def shape(self):
        return self.field.shape

    def sidecar(self) -> dict:
        return {
            "fixations": [{"x": f.x, "y": f.y, "loss": f.loss_at_convergence} for f in self.fixations],
            "alphas": list(self.alphas),
            "loss_gains": list(self.loss_gains),
            "target_class": self.target_class,
            "config": self.provenance.get("config"),
            "predictor": self.provenance.get("predictor"),
            "wall_clock_s": self.provenance.get("wall_clock_s"),
        }


def compute_alphas(n: int, alpha_mode: str = "uniform", loss_gains=None) -> np.ndarray:
    if alpha_mode == "uniform":
        return np.full(n, 1.0 / n)
    if alpha_mode != "loss-gain":
        raise ValueError(f"unknown alpha_mode {alpha_mode!r}")
    gains = np.maximum(np.asarray(loss_gains, dtype=np.float64), 0.0)
    if gains.shape != (n,):
        raise ValueError("need one loss gain per fixation")
    total = gains.sum()
    if not total > 0:
        return np.full(n, 1.0 / n)
    return gains / total


def synthesize(scanpath, grid, sigma_fovea: float, alpha_mode: str = "uniform", loss_gains=None) -> AttributionMap:
    """Weighted sum of fixation-centred blobs, min-max normalized."""
    fixations = tuple(scanpath.fixations if isinstance(scanpath, Scanpath) else scanpath)
    if not fixations:
        raise ValueError("cannot synthesize a map from an empty scanpath")
    if loss_gains is None and isinstance(scanpath, Scanpath):
        loss_gains = scanpath.loss_gains
    alphas = compute_alphas(len(fixations), alpha_mode, loss_gains)
    acc = np.zeros(tuple(grid[:2]))
    for a, f in zip(alphas, fixations):
        xy = f.xy if isinstance(f, Fixation) else f
        acc += a * gaussian_blob(xy, sigma_fovea, grid[:2])
    fixations = tuple(f if isinstance(f, Fixation) else Fixation(*f) for f in fixations)
    return AttributionMap(
        field=min_max_normalize(acc),
        fixations=fixations,
        alphas=tuple(float(a) for a in alphas),
        loss_gains=tuple(loss_gains) if loss_gains is not None else (),
    )


def explain(image, predictor, config: FovexConfig, target: Optional[int] = None, rng=None) -> AttributionMap:
    """Blur, optimize a scanpath, and turn it into an attribution map."""
    t0 = time.perf_counter()
    image = as_image(image)
    cfg = config.resolved(*image.shape[:2])
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if target is None:
        target = default_target(image, predictor)
    blurred = blur(image, cfg.blur_kernel())
    scanpath, _, traces = generate_scanpath(image, target, predictor, cfg, rng, blurred=blurred)
    emap = synthesize(scanpath, image.shape[:2], cfg.sigma_fovea, cfg.alpha_mode)
    emap.target_class = int(target)
    emap.traces = traces
    emap.provenance = {
        "config": config.to_dict(),
        "predictor": predictor.name,
        "wall_clock_s": time.perf_counter() - t0,
    }
    return emap


def random_baseline_map(grid, num_blobs: int = 3, sigma_range=None, rng=None) -> AttributionMap:
    """Smooth random map: blobs at uniform centres with uniform widths.

    ``sigma_range`` is in pixels and defaults to 5-20% of the shorter side.
    """
    if num_blobs < 1:
        raise ValueError("num_blobs must be >= 1")
    h, w = int(grid[0]), int(grid[1])
    if sigma_range is None:
        sigma_range = (0.05 * min(h, w), 0.2 * min(h, w))
    lo, hi = sigma_range
    if not 0 < lo <= hi:
        raise ValueError("sigma_range must satisfy 0 < low <= high")
    rng = np.random.default_rng() if rng is None else rng
    acc = np.zeros((h, w))
    for _ in range(num_blobs):
        cx, cy = rng.uniform(0.0, 1.0, size=2)
        acc += gaussian_blob((cx, cy), rng.uniform(lo, hi), (h, w))
    return AttributionMap(field=min_max_normalize(acc), provenance={"baseline": "random", "num_blobs": num_blobs})


# -- serialization ----------------------------------------------------------


def save_map(emap: AttributionMap, png_path, sidecar_path=None) -> None:
    """16-bit PNG of the field plus a JSON sidecar, both written atomically."""
    save_field16(emap.field, png_path)
    if sidecar_path is None:
        sidecar_path = Path(png_path).with_suffix(".json")
    write_json_atomic(emap.sidecar(), sidecar_path)


def load_map(png_path, sidecar_path=None) -> AttributionMap:
    field = load_field16(png_path)
    if sidecar_path is None:
        sidecar_path = Path(png_path).with_suffix(".json")
    meta = {}
    if Path(sidecar_path).exists():
        meta = json.loads(Path(sidecar_path).read_text())
    fixations = tuple(Fixation(f["x"], f["y"], f.get("loss", float("nan"))) for f in meta.get("fixations", []))
    return AttributionMap(
        field=field,
        fixations=fixations,
        alphas=tuple(meta.get("alphas", ())),
        target_class=meta.get("target_class"),
        provenance={k: meta.get(k) for k in ("config", "predictor", "wall_clock_s")},
        loss_gains=tuple(meta.get("loss_gains", ())),
    )


def write_json_atomic(obj, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
