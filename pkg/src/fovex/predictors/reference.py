"""Analytically differentiable reference predictors for desk-scale work."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

from ..imaging import BBox
from .base import Predictor, PredictorDescriptor


class LinearPredictor(Predictor):
    """``logits = W @ flatten(image) + b``."""

    def __init__(self, descriptor: PredictorDescriptor, weights, bias=None):
        d = int(np.prod(descriptor.input_shape))
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (descriptor.num_classes, d):
            raise ValueError(f"weights must have shape {(descriptor.num_classes, d)}, got {weights.shape}")
        self.descriptor = descriptor
        self.weights = weights
        self.bias = np.zeros(descriptor.num_classes) if bias is None else np.asarray(bias, dtype=np.float64)

    def _forward(self, image, target, want_gradient):
        scores = self.weights @ image.ravel() + self.bias
        grad = self.weights[target].reshape(self.descriptor.input_shape).copy() if want_gradient else None
        return scores, grad

    def logit_vjp(self, image, cotangent):
        self._validate(image, None)
        return (np.asarray(cotangent, dtype=np.float64) @ self.weights).reshape(self.descriptor.input_shape)


def make_linear_reference(descriptor: PredictorDescriptor, seed: int = 0, scale: float = 1.0) -> LinearPredictor:
    """Linear predictor with weights drawn deterministically from ``seed``."""
    if not descriptor.supports_gradient:
        descriptor = PredictorDescriptor(**{**descriptor.__dict__, "supports_gradient": True})
    rng = np.random.default_rng(seed)
    d = int(np.prod(descriptor.input_shape))
    weights = rng.normal(0.0, scale / np.sqrt(d), size=(descriptor.num_classes, d))
    bias = rng.normal(0.0, 0.1, size=descriptor.num_classes)
    return LinearPredictor(descriptor, weights, bias)


def box3(image: np.ndarray) -> np.ndarray:
    """3x3 neighbourhood mean per channel, replicate borders."""
    return ndimage.uniform_filter(image, size=(3, 3, 1), mode="nearest")


def box3_transpose(g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`box3` (the replicate border makes it non-symmetric)."""
    h, w = g.shape[:2]
    acc = np.zeros((h + 2, w + 2) + g.shape[2:])
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            acc[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] += g
    acc[1] += acc[0]
    acc[h] += acc[h + 1]
    acc[:, 1] += acc[:, 0]
    acc[:, w] += acc[:, w + 1]
    return acc[1 : h + 1, 1 : w + 1] / 9.0


def local_deviation(image: np.ndarray) -> np.ndarray:
    return image - box3(image)


class PlantedPatchPredictor(Predictor):
    """Synthetic classifier whose evidence for class ``k`` lives in ``bboxes[k]``.

    ``logit_k = sharpness * mean |x - box3(x)|`` over the pixels and channels
    of ``bboxes[k]``.  Gaussian blurring shrinks that local contrast, so
    revealing a class's patch raises its logit.
    """

    def __init__(self, descriptor: PredictorDescriptor, bboxes: Sequence[BBox], sharpness: float = 3.0):
        if len(bboxes) != descriptor.num_classes:
            raise ValueError("need exactly one bbox per class")
        shape = descriptor.input_shape[:2]
        masks = []
        for b in bboxes:
            b = b if isinstance(b, BBox) else BBox.from_dict(b)
            if not b.intersects(shape):
                raise ValueError(f"bbox {b} lies outside the {shape} input")
            m = np.zeros(shape)
            m[b.slices(shape)] = 1.0
            masks.append(m / (m.sum() * descriptor.input_channels))
        self.descriptor = descriptor
        self.bboxes = [b if isinstance(b, BBox) else BBox.from_dict(b) for b in bboxes]
        self.sharpness = float(sharpness)
        self._masks = np.stack(masks)  # (K, H, W), each row sums to 1/C

    def _forward(self, image, target, want_gradient):
        v = local_deviation(image)
        per_pixel = np.abs(v).sum(axis=2)
        scores = self.sharpness * np.tensordot(self._masks, per_pixel, axes=([1, 2], [0, 1]))
        grad = None
        if want_gradient:
            grad = self._pullback(v, self._masks[target])
        return scores, grad

    def _pullback(self, v, weight_map):
        g = self.sharpness * np.sign(v) * weight_map[:, :, None]
        return g - box3_transpose(g)

    def logit_vjp(self, image, cotangent):
        img = self._validate(image, None)
        weight_map = np.tensordot(np.asarray(cotangent, dtype=np.float64), self._masks, axes=1)
        return self._pullback(local_deviation(img), weight_map)


def make_planted_patch_reference(descriptor: PredictorDescriptor, bboxes, sharpness: float = 3.0, seed: int = 0):
    """Build a :class:`PlantedPatchPredictor`; ``seed`` is accepted for API symmetry."""
    if not descriptor.supports_gradient:
        descriptor = PredictorDescriptor(**{**descriptor.__dict__, "supports_gradient": True})
    return PlantedPatchPredictor(descriptor, bboxes, sharpness)


class ConstantPredictor(Predictor):
    """Ignores its input; handy for metric sanity checks."""

    def __init__(self, descriptor: PredictorDescriptor, logits):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (descriptor.num_classes,):
            raise ValueError("logits length must equal num_classes")
        self.descriptor = descriptor
        self.logits = logits

    def _forward(self, image, target, want_gradient):
        return self.logits.copy(), (np.zeros(self.descriptor.input_shape) if want_gradient else None)

    def logit_vjp(self, image, cotangent):
        self._validate(image, None)
        return np.zeros(self.descriptor.input_shape)
