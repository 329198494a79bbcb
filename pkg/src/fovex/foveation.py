"""Differentiable foveation: single-fixation rendering and cumulative state."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .imaging import as_image, gaussian_blob, gaussian_blob_grad, make_gaussian_kernel

ALPHA_MODES = ("uniform", "loss-gain")
GRADIENT_MODES = ("analytic", "finite-difference")


@dataclass(frozen=True)
class FovexConfig:
    """Hyperparameters of the explainer.

    ``sigma_fovea`` and ``fd_step`` may be left as ``None``; they then
    resolve against the input size (``0.1 * min(H, W)`` pixels and
    ``1 / max(H, W)`` respectively, see :meth:`resolved`).  The saliency
    blobs used for the final map share ``sigma_fovea``.
    """

    sigma_blur: float = 5.0
    blur_filter_size: int = 21
    sigma_fovea: Optional[float] = None
    forgetting: float = 1.0
    step_size: float = 0.1
    optimization_steps: int = 20
    random_restarts: bool = False
    restart_patience: int = 5
    scanpath_length: int = 10
    alpha_mode: str = "uniform"
    gradient_mode: str = "finite-difference"
    fd_step: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_blur > 0:
            raise ValueError("sigma_blur must be > 0")
        if self.blur_filter_size < 1 or self.blur_filter_size % 2 == 0:
            raise ValueError("blur_filter_size must be a positive odd integer")
        if self.sigma_fovea is not None and not self.sigma_fovea > 0:
            raise ValueError("sigma_fovea must be > 0")
        if not 0.0 <= self.forgetting <= 1.0:
            raise ValueError("forgetting must lie in [0, 1]")
        if not self.step_size >= 0:
            raise ValueError("step_size must be >= 0")
        if self.optimization_steps < 1:
            raise ValueError("optimization_steps must be >= 1")
        if self.restart_patience < 1:
            raise ValueError("restart_patience must be >= 1")
        if self.scanpath_length < 1:
            raise ValueError("scanpath_length must be >= 1")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError("fd_step must be > 0")
        if not -(2**63) <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def resolved(self, height: int, width: int) -> "FovexConfig":
        return replace(
            self,
            sigma_fovea=self.sigma_fovea if self.sigma_fovea is not None else 0.1 * min(height, width),
            fd_step=self.fd_step if self.fd_step is not None else 1.0 / max(height, width),
        )

    def blur_kernel(self):
        return make_gaussian_kernel(self.sigma_blur, self.blur_filter_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FovexConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Fixation:
    x: float
    y: float
    loss_at_convergence: float = float("nan")

    @property
    def xy(self):
        return (self.x, self.y)


def clamp_unit(x: float, y: float):
    return min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0)


@dataclass(frozen=True)
class FoveationState:
    acuity: np.ndarray
    rendered: np.ndarray
    blurred_base: np.ndarray
    fixation_history: tuple = field(default_factory=tuple)


def _check_pair(image, blurred):
    if image.shape != blurred.shape:
        raise ValueError(f"image {image.shape} and blurred {blurred.shape} differ in shape")


def blend(image: np.ndarray, blurred: np.ndarray, weight: np.ndarray) -> np.ndarray:
    w = weight[:, :, None]
    return w * image + (1.0 - w) * blurred


def foveate(image, blurred, f, sigma_fovea: float) -> np.ndarray:
    """Render ``image`` sharp around ``f`` and ``blurred`` elsewhere."""
    image, blurred = as_image(image), as_image(blurred)
    _check_pair(image, blurred)
    xy = f.xy if isinstance(f, Fixation) else f
    return blend(image, blurred, gaussian_blob(xy, sigma_fovea, image.shape[:2]))


def raw_acuity(history: Sequence, shape, sigma_fovea: float, forgetting: float) -> np.ndarray:
    """Unclamped forgetting-weighted sum of blobs; the last entry is newest.

    The newest fixation has weight 1 and each older one is multiplied by
    ``forgetting`` once more per step back in time.
    """
    acc = np.zeros(tuple(shape), dtype=np.float64)
    n = len(history)
    for j, f in enumerate(history):
        weight = forgetting ** (n - 1 - j)
        if weight == 0.0:
            continue
        xy = f.xy if isinstance(f, Fixation) else f
        acc += weight * gaussian_blob(xy, sigma_fovea, shape)
    return acc


def accumulate_state(prev: Optional[FoveationState], image, blurred, f_new, config: FovexConfig) -> FoveationState:
    image, blurred = as_image(image), as_image(blurred)
    _check_pair(image, blurred)
    cfg = config.resolved(*image.shape[:2])
    history = (prev.fixation_history if prev is not None else ()) + (f_new,)
    acuity = np.clip(raw_acuity(history, image.shape[:2], cfg.sigma_fovea, cfg.forgetting), 0.0, 1.0)
    return FoveationState(
        acuity=acuity,
        rendered=blend(image, blurred, acuity),
        blurred_base=blurred,
        fixation_history=history,
    )


def render_candidate(image, blurred, history: Sequence, candidate, config: FovexConfig):
    """State with ``candidate`` folded in as the newest term.

    Returns ``(rendered, raw_acuity)``; the raw sum is what decides clamp
    saturation for the gradient.
    """
    raw = raw_acuity(tuple(history) + (candidate,), image.shape[:2], config.sigma_fovea, config.forgetting)
    return blend(image, blurred, np.clip(raw, 0.0, 1.0)), raw


def state_gradient_wrt_fixation(image, blurred, history: Sequence, candidate, config: FovexConfig):
    """d(rendered)/d(candidate.x, candidate.y) as two ``(H, W, C)`` arrays.

    Pixels where the cumulative acuity sits at the clamp get zero.
    """
    if config.gradient_mode != "analytic":
        raise ValueError("state gradient requires gradient_mode='analytic'")
    image, blurred = as_image(image), as_image(blurred)
    _check_pair(image, blurred)
    cfg = config.resolved(*image.shape[:2])
    xy = candidate.xy if isinstance(candidate, Fixation) else candidate
    _, raw = render_candidate(image, blurred, history, xy, cfg)
    _, dbx, dby = gaussian_blob_grad(xy, cfg.sigma_fovea, image.shape[:2])
    live = (raw < 1.0).astype(np.float64)
    contrast = image - blurred
    return contrast * (dbx * live)[:, :, None], contrast * (dby * live)[:, :, None]
