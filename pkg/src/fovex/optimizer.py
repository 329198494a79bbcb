"""Scanpath generation by gradient descent on fixation coordinates."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import CapabilityError
from .foveation import Fixation, FovexConfig, FoveationState, accumulate_state, blend, clamp_unit, raw_acuity
from .imaging import as_image, blur, gaussian_blob_grad

LOSS_FLOOR = 1e-12
CENTER = (0.5, 0.5)


def loss(output, target: int) -> float:
    """Negative log-probability of ``target``."""
    return float(-np.log(max(float(output.probabilities[target]), LOSS_FLOOR)))


@dataclass(frozen=True)
class StepRecord:
    step: int
    x: float
    y: float
    loss: float


@dataclass
class OptimizationTrace:
    steps: List[StepRecord] = field(default_factory=list)
    restarts_taken: int = 0
    converged_fixation: Optional[Fixation] = None
    wall_clock: float = 0.0
    forward_passes: int = 0

    @property
    def best_losses(self) -> List[float]:
        """Running minimum of the loss after each step."""
        return list(np.minimum.accumulate([s.loss for s in self.steps]))


@dataclass(frozen=True)
class Scanpath:
    fixations: tuple
    loss_gains: tuple

    def __len__(self):
        return len(self.fixations)


def _render(image, blurred, history, candidate, cfg):
    raw = raw_acuity(tuple(history) + (candidate,), image.shape[:2], cfg.sigma_fovea, cfg.forgetting)
    return np.clip(blend(image, blurred, np.clip(raw, 0.0, 1.0)), 0.0, 1.0), raw


def _loss_at(image, blurred, history, candidate, target, predictor, cfg) -> float:
    rendered, _ = _render(image, blurred, history, candidate, cfg)
    return loss(predictor.predict(rendered), target)


def _probe(image, blurred, history, candidate, target, predictor, cfg):
    """Loss and gradient at ``candidate``; returns ``(loss, grad, forward_passes)``.

    In finite-difference mode the loss is the mean of the four central
    probes, so the step costs exactly four forward passes.
    """
    x, y = candidate
    if cfg.gradient_mode == "finite-difference":
        h = cfg.fd_step
        lxp = _loss_at(image, blurred, history, (x + h, y), target, predictor, cfg)
        lxm = _loss_at(image, blurred, history, (x - h, y), target, predictor, cfg)
        lyp = _loss_at(image, blurred, history, (x, y + h), target, predictor, cfg)
        lym = _loss_at(image, blurred, history, (x, y - h), target, predictor, cfg)
        grad = np.array([(lxp - lxm) / (2 * h), (lyp - lym) / (2 * h)])
        return 0.25 * (lxp + lxm + lyp + lym), grad, 4

    if not predictor.descriptor.supports_gradient:
        raise CapabilityError(f"analytic mode needs input gradients, {predictor.name!r} has none")
    rendered, raw = _render(image, blurred, history, candidate, cfg)
    out = predictor.predict(rendered)
    cot = out.probabilities.copy()
    cot[target] -= 1.0
    dl_ds = predictor.logit_vjp(rendered, cot)
    _, dbx, dby = gaussian_blob_grad(candidate, cfg.sigma_fovea, image.shape[:2])
    live = raw < 1.0
    weighted = (dl_ds * (image - blurred)).sum(axis=2) * live
    grad = np.array([(weighted * dbx).sum(), (weighted * dby).sum()])
    return loss(out, target), grad, 1


def fixation_gradient(image, blurred, history, candidate, target, predictor, config: FovexConfig) -> np.ndarray:
    """dL/d(candidate.x, candidate.y) in normalized coordinates."""
    image, blurred = as_image(image), as_image(blurred)
    cfg = config.resolved(*image.shape[:2])
    xy = candidate.xy if isinstance(candidate, Fixation) else tuple(candidate)
    return _probe(image, blurred, history, xy, target, predictor, cfg)[1]


def optimize_fixation(image, blurred, history: Sequence, target: int, predictor, config: FovexConfig, rng, init=CENTER):
    """Descend from ``init`` for ``optimization_steps`` steps.

    Returns the lowest-loss candidate visited, with its trace.  With random
    restarts on, a candidate that has not improved the best loss for
    ``restart_patience`` steps is replaced by a uniform sample; restarts
    draw from the same step budget.
    """
    image, blurred = as_image(image), as_image(blurred)
    cfg = config.resolved(*image.shape[:2])
    history = tuple(f.xy if isinstance(f, Fixation) else tuple(f) for f in history)
    t0 = time.perf_counter()
    trace = OptimizationTrace()
    cand = clamp_unit(*init)
    best_loss, best_xy, stale = np.inf, cand, 0
    for k in range(cfg.optimization_steps):
        value, grad, passes = _probe(image, blurred, history, cand, target, predictor, cfg)
        trace.forward_passes += passes
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {k}")
        trace.steps.append(StepRecord(k, cand[0], cand[1], value))
        if value < best_loss:
            best_loss, best_xy, stale = value, cand, 0
        else:
            stale += 1
        if cfg.random_restarts and stale >= cfg.restart_patience:
            cand = tuple(float(v) for v in rng.uniform(0.0, 1.0, size=2))
            trace.restarts_taken += 1
            stale = 0
            continue
        cand = clamp_unit(cand[0] - cfg.step_size * grad[0], cand[1] - cfg.step_size * grad[1])
    trace.converged_fixation = Fixation(best_xy[0], best_xy[1], float(best_loss))
    trace.wall_clock = time.perf_counter() - t0
    return trace.converged_fixation, trace


def default_target(image, predictor) -> int:
    return int(np.argmax(predictor.predict(image).scores))


def generate_scanpath(image, target, predictor, config: FovexConfig, rng, blurred=None):
    """Run ``scanpath_length`` rounds of fixation optimization.

    Each round starts at the previously accepted fixation (the first at the
    image center).  Returns ``(Scanpath, FoveationState, traces)``.
    """
    image = as_image(image)
    cfg = config.resolved(*image.shape[:2])
    if blurred is None:
        blurred = blur(image, cfg.blur_kernel())
    if target is None:
        target = default_target(image, predictor)
    state: Optional[FoveationState] = None
    fixations, traces = [], []
    init = CENTER
    for _ in range(cfg.scanpath_length):
        fix, trace = optimize_fixation(image, blurred, fixations, target, predictor, cfg, rng, init=init)
        fixations.append(fix)
        traces.append(trace)
        state = accumulate_state(state, image, blurred, fix, cfg)
        init = fix.xy
    gains = [traces[0].steps[0].loss - fixations[0].loss_at_convergence]
    gains += [prev.loss_at_convergence - cur.loss_at_convergence for prev, cur in zip(fixations, fixations[1:])]
    return Scanpath(tuple(fixations), tuple(float(g) for g in gains)), state, traces
