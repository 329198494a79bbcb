"""Build predictors from CLI-style specs.

``builtin:<kind>`` with kind in ``linear``, ``planted``, ``pair``, ``constant``
uses the given input shape and optional overrides from a predictor config
dict; ``exec:<command>`` and ``tcp:<host:port>`` connect to an external
endpoint.
"""

from __future__ import annotations

from ..desk import pair_layout, quadrant_layout
from ..imaging import BBox
from .base import PredictorDescriptor
from .external import connect_external
from .reference import ConstantPredictor, make_linear_reference, make_planted_patch_reference

BUILTIN_KINDS = ("linear", "planted", "pair", "constant")


def build_builtin(kind: str, input_shape=None, options: dict | None = None):
    options = dict(options or {})
    if "input" in options:
        shape = options["input"]
        input_shape = (int(shape["h"]), int(shape["w"]), int(shape.get("c", 3)))
    if input_shape is None:
        raise ValueError("builtin predictors need an input size (manifest input_size or predictor config)")
    h, w, c = input_shape
    if kind == "linear":
        k = int(options.get("num_classes", 10))
        desc = PredictorDescriptor(k, h, w, c, True, "builtin:linear")
        return make_linear_reference(desc, seed=int(options.get("seed", 0)), scale=float(options.get("scale", 1.0)))
    if kind in ("planted", "pair"):
        if "bboxes" in options:
            bboxes = [BBox.from_dict(b) for b in options["bboxes"]]
        else:
            patch = int(options.get("patch", max(1, min(h, w) // 4)))
            bboxes = quadrant_layout(min(h, w), patch) if kind == "planted" else pair_layout(min(h, w), patch)
        desc = PredictorDescriptor(len(bboxes), h, w, c, True, f"builtin:{kind}")
        return make_planted_patch_reference(desc, bboxes, float(options.get("sharpness", 3.0)))
    if kind == "constant":
        logits = options.get("logits", [1.0, 0.0])
        desc = PredictorDescriptor(len(logits), h, w, c, True, "builtin:constant")
        return ConstantPredictor(desc, logits)
    raise ValueError(f"unknown builtin predictor {kind!r}; choose from {BUILTIN_KINDS}")


def build_predictor(spec: str, input_shape=None, options: dict | None = None):
    scheme, _, rest = spec.partition(":")
    if scheme == "builtin":
        kind = rest or (options or {}).get("kind", "")
        return build_builtin(kind, input_shape, options)
    if scheme in ("exec", "tcp"):
        return connect_external(spec)
    raise ValueError(f"unsupported predictor spec {spec!r}")
