from .base import CountingPredictor, Predictor, PredictorDescriptor, PredictorOutput, softmax
from .external import ExternalPredictor, connect_external
from .reference import (
    ConstantPredictor,
    LinearPredictor,
    PlantedPatchPredictor,
    make_linear_reference,
    make_planted_patch_reference,
)

__all__ = [
    "ConstantPredictor",
    "CountingPredictor",
    "ExternalPredictor",
    "LinearPredictor",
    "PlantedPatchPredictor",
    "Predictor",
    "PredictorDescriptor",
    "PredictorOutput",
    "connect_external",
    "make_linear_reference",
    "make_planted_patch_reference",
    "softmax",
]
