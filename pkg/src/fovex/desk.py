"""Seeded synthetic benchmarks built around the planted-patch predictor.

Every image has a smooth background and textured patches at known
locations, so the correct evidence region of each class is known exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .imaging import BBox, min_max_normalize
from .predictors import PredictorDescriptor, make_planted_patch_reference


@dataclass
class DeskCase:
    image: np.ndarray
    target: int
    bbox: BBox
    seed: int


@dataclass
class DeskBenchmark:
    predictor: object
    bboxes: List[BBox]
    cases: List[DeskCase] = field(default_factory=list)

    def predictor_spec(self) -> dict:
        d = self.predictor.descriptor
        return {
            "kind": "planted",
            "num_classes": d.num_classes,
            "input": {"h": d.input_height, "w": d.input_width, "c": d.input_channels},
            "bboxes": [b.to_dict() for b in self.bboxes],
            "sharpness": self.predictor.sharpness,
        }


def smooth_background(rng, size: int, channels: int) -> np.ndarray:
    """Low-frequency field in roughly [0.3, 0.7]."""
    coarse = rng.uniform(0.0, 1.0, size=(4, 4, channels))
    yy = np.linspace(0, 3, size)
    # bilinear upsampling of the coarse grid
    i0 = np.minimum(np.floor(yy).astype(int), 2)
    t = yy - i0
    rows = coarse[i0] * (1 - t)[:, None, None] + coarse[i0 + 1] * t[:, None, None]
    full = rows[:, i0] * (1 - t)[None, :, None] + rows[:, i0 + 1] * t[None, :, None]
    return 0.3 + 0.4 * min_max_normalize(full) if np.ptp(full) > 0 else np.full((size, size, channels), 0.5)


def paint_texture(image, bbox: BBox, amplitude: float, rng) -> None:
    rows, cols = bbox.slices(image.shape[:2])
    patch = image[rows, cols]
    noise = rng.choice([-0.5, 0.5], size=patch.shape[:2])[:, :, None]
    image[rows, cols] = np.clip(patch + amplitude * noise, 0.0, 1.0)


def quadrant_layout(size: int, patch: int) -> List[BBox]:
    near = int(round(size * 5 / 16 - patch / 2))
    far = int(round(size * 11 / 16 - patch / 2))
    return [BBox(near, near, patch, patch), BBox(far, near, patch, patch), BBox(near, far, patch, patch), BBox(far, far, patch, patch)]


def pair_layout(size: int, patch: int) -> List[BBox]:
    y = (size - patch) // 2
    left = int(round(size * 0.28 - patch / 2))
    right = int(round(size * 0.72 - patch / 2))
    return [BBox(left, y, patch, patch), BBox(right, y, patch, patch)]


def make_localization_benchmark(n_images: int = 20, size: int = 64, patch: int = 16, channels: int = 3,
                                sharpness: float = 3.0, amplitude: float = 0.6, distractor: float = 0.15,
                                seed: int = 0) -> DeskBenchmark:
    """One strong patch per image in one of four class regions.

    A second region carries a weak texture as a distractor.  The target is
    the class whose region holds the strong patch.
    """
    bboxes = quadrant_layout(size, patch)
    desc = PredictorDescriptor(len(bboxes), size, size, channels, True, "planted-quadrants")
    bench = DeskBenchmark(make_planted_patch_reference(desc, bboxes, sharpness), bboxes)
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        image = smooth_background(rng, size, channels)
        target, decoy = rng.choice(len(bboxes), size=2, replace=False)
        paint_texture(image, bboxes[target], amplitude, rng)
        paint_texture(image, bboxes[decoy], distractor, rng)
        bench.cases.append(DeskCase(image, int(target), bboxes[target], i))
    return bench


def make_pair_benchmark(n_images: int = 20, size: int = 64, patch: int = 16, channels: int = 3,
                        sharpness: float = 3.0, amplitude: float = 0.6, seed: int = 0) -> DeskBenchmark:
    """Two equally strong patches per image, one per class."""
    bboxes = pair_layout(size, patch)
    desc = PredictorDescriptor(2, size, size, channels, True, "planted-pair")
    bench = DeskBenchmark(make_planted_patch_reference(desc, bboxes, sharpness), bboxes)
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        image = smooth_background(rng, size, channels)
        for b in bboxes:
            paint_texture(image, b, amplitude, rng)
        bench.cases.append(DeskCase(image, 0, bboxes[0], i))
    return bench
