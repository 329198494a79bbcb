"""Newline-delimited JSON wire format for external predictors.

One UTF-8 JSON object per line.  The server opens with ``hello``; the client
then sends ``forward`` requests and the server answers each with ``scores``
or ``error``, echoing the request id.  Pixel payloads are base64-encoded
little-endian float32 in row-major ``H*W*C`` order.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from ..errors import MalformedMessage

F32 = np.dtype("<f4")


def encode_f32(array) -> str:
    return base64.b64encode(np.ascontiguousarray(array, dtype=F32).tobytes()).decode("ascii")


def decode_f32(text: str, count: int | None = None) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise MalformedMessage(f"invalid base64 payload: {exc}") from exc
    if len(raw) % 4:
        raise MalformedMessage("payload length is not a multiple of 4 bytes")
    arr = np.frombuffer(raw, dtype=F32).astype(np.float64)
    if count is not None and arr.size != count:
        raise MalformedMessage(f"payload holds {arr.size} values, expected {count}")
    return arr


def dumps(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def loads(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMessage("message is not valid UTF-8") from exc
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedMessage(f"message is not valid JSON: {exc.msg}") from exc
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise MalformedMessage("message must be a JSON object with a string 'type'")
    return msg


def hello(descriptor) -> dict:
    return {"type": "hello", **descriptor.to_dict()}


def forward(req_id: int, image, target, want_gradient: bool) -> dict:
    return {
        "type": "forward",
        "id": int(req_id),
        "image_f32_b64": encode_f32(image),
        "target": None if target is None else int(target),
        "want_gradient": bool(want_gradient),
    }


def scores(req_id: int, values, gradient=None) -> dict:
    msg = {"type": "scores", "id": int(req_id), "scores": [float(v) for v in values]}
    if gradient is not None:
        msg["gradient_f32_b64"] = encode_f32(gradient)
    return msg


def error(req_id, message: str) -> dict:
    return {"type": "error", "id": req_id, "message": str(message)}


def is_uint(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def parse_hello(msg: dict) -> dict:
    """Validate a hello message; returns descriptor keyword arguments."""
    if msg.get("type") != "hello":
        raise MalformedMessage(f"expected hello, got {msg.get('type')!r}")
    try:
        shape = msg["input"]
        out = dict(
            name=str(msg["name"]),
            num_classes=int(msg["num_classes"]),
            input_height=int(shape["h"]),
            input_width=int(shape["w"]),
            input_channels=int(shape["c"]),
            supports_gradient=msg["supports_gradient"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedMessage(f"incomplete hello message: {exc}") from exc
    if not isinstance(out["supports_gradient"], bool):
        raise MalformedMessage("hello.supports_gradient must be a boolean")
    return out
