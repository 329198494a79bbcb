"""Uniform black-box predictor interface.

Predictors return logits; softmax is applied once, here, so every consumer
sees identically normalized probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import CapabilityError
from ..imaging import as_image


def softmax(scores) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True)
class PredictorDescriptor:
    num_classes: int
    input_height: int
    input_width: int
    input_channels: int
    supports_gradient: bool
    name: str = "predictor"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if min(self.input_height, self.input_width, self.input_channels) < 1:
            raise ValueError("input dimensions must be positive")

    @property
    def input_shape(self):
        return (self.input_height, self.input_width, self.input_channels)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_classes": self.num_classes,
            "input": {"h": self.input_height, "w": self.input_width, "c": self.input_channels},
            "supports_gradient": self.supports_gradient,
        }


@dataclass(frozen=True)
class PredictorOutput:
    scores: np.ndarray
    probabilities: np.ndarray
    input_gradient: Optional[np.ndarray] = None


class Predictor:
    """Base class for all predictors.

    Subclasses implement :meth:`_forward`, returning logits and, when asked,
    the gradient of ``logits[target]`` with respect to the input image.
    """

    descriptor: PredictorDescriptor

    @property
    def name(self) -> str:
        return self.descriptor.name

    def _forward(self, image: np.ndarray, target: Optional[int], want_gradient: bool):
        raise NotImplementedError

    def _validate(self, image, target):
        img = as_image(image)
        if img.shape != self.descriptor.input_shape:
            raise ValueError(f"image shape {img.shape} does not match predictor input {self.descriptor.input_shape}")
        if target is not None and not 0 <= int(target) < self.descriptor.num_classes:
            raise ValueError(f"target {target} out of range for {self.descriptor.num_classes} classes")
        return img

    def predict(self, image, target: Optional[int] = None, want_gradient: bool = False) -> PredictorOutput:
        img = self._validate(image, target)
        if want_gradient:
            if not self.descriptor.supports_gradient:
                raise CapabilityError(f"predictor {self.name!r} does not provide input gradients")
            if target is None:
                raise ValueError("a target class is required when requesting a gradient")
        scores, grad = self._forward(img, None if target is None else int(target), bool(want_gradient))
        scores = np.asarray(scores, dtype=np.float64)
        return PredictorOutput(scores=scores, probabilities=softmax(scores), input_gradient=grad)

    def logit_vjp(self, image, cotangent) -> np.ndarray:
        """``sum_k cotangent[k] * d logits[k] / d image``.

        The generic version issues one gradient request per class with a
        nonzero cotangent; reference predictors override it.
        """
        img = self._validate(image, None)
        out = np.zeros_like(img)
        for k, c in enumerate(np.asarray(cotangent, dtype=np.float64)):
            if c != 0.0:
                out += c * self.predict(img, target=k, want_gradient=True).input_gradient
        return out

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CountingPredictor(Predictor):
    """Wraps a predictor and counts forward passes and gradient requests."""

    def __init__(self, inner: Predictor):
        self.inner = inner
        self.descriptor = inner.descriptor
        self.forward_calls = 0
        self.vjp_calls = 0

    def predict(self, image, target=None, want_gradient=False):
        self.forward_calls += 1
        return self.inner.predict(image, target, want_gradient)

    def logit_vjp(self, image, cotangent):
        self.vjp_calls += 1
        return self.inner.logit_vjp(image, cotangent)

    def reset(self):
        self.forward_calls = 0
        self.vjp_calls = 0

    def close(self):
        self.inner.close()
