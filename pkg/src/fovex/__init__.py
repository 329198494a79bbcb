"""Foveation-based explanations for image classifiers.

A simulated gaze scans the image; each fixation is chosen by gradient
descent on the classifier's loss over a foveated rendering, and the
attribution map is a weighted sum of Gaussian blobs at the fixations.
"""

from .attribution import AttributionMap, explain, load_map, random_baseline_map, save_map, synthesize
from .foveation import Fixation, FovexConfig, FoveationState, accumulate_state, foveate
from .optimizer import Scanpath, generate_scanpath, optimize_fixation

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "Fixation",
    "FoveationState",
    "FovexConfig",
    "Scanpath",
    "accumulate_state",
    "explain",
    "foveate",
    "generate_scanpath",
    "load_map",
    "optimize_fixation",
    "random_baseline_map",
    "save_map",
    "synthesize",
]
