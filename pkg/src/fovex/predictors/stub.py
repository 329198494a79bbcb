"""Serve a predictor over the wire protocol (stdio or TCP)."""

from __future__ import annotations

import logging
import socketserver
import sys

import numpy as np

from ..errors import CapabilityError, MalformedMessage
from . import protocol

logger = logging.getLogger(__name__)


def handle_request(predictor, msg: dict) -> dict:
    """Answer one parsed request with a ``scores`` or ``error`` message."""
    req_id = msg.get("id")
    if msg["type"] != "forward":
        return protocol.error(req_id, f"unsupported message type {msg['type']!r}")
    if not protocol.is_uint(req_id):
        return protocol.error(req_id, "id must be a non-negative integer")
    shape = predictor.descriptor.input_shape
    try:
        flat = protocol.decode_f32(msg.get("image_f32_b64", ""), int(np.prod(shape)))
    except MalformedMessage as exc:
        return protocol.error(req_id, str(exc))
    target = msg.get("target")
    if target is not None and not protocol.is_uint(target):
        return protocol.error(req_id, "target must be a non-negative integer or null")
    want_gradient = msg.get("want_gradient", False)
    if not isinstance(want_gradient, bool):
        return protocol.error(req_id, "want_gradient must be a boolean")
    try:
        out = predictor.predict(flat.reshape(shape), target=target, want_gradient=want_gradient)
    except (ValueError, CapabilityError) as exc:
        return protocol.error(req_id, str(exc))
    return protocol.scores(req_id, out.scores, out.input_gradient)


def serve_stream(predictor, rfile, wfile) -> None:
    """Run one session: hello, then request/response until EOF.

    A line that is not a JSON object with a ``type`` ends the session.
    """
    wfile.write(protocol.dumps(protocol.hello(predictor.descriptor)))
    wfile.flush()
    for line in iter(rfile.readline, b""):
        if not line.strip():
            continue
        try:
            msg = protocol.loads(line)
        except MalformedMessage as exc:
            logger.warning("terminating session: %s", exc)
            wfile.write(protocol.dumps(protocol.error(None, str(exc))))
            wfile.flush()
            return
        wfile.write(protocol.dumps(handle_request(predictor, msg)))
        wfile.flush()


def serve_stdio(predictor) -> None:
    serve_stream(predictor, sys.stdin.buffer, sys.stdout.buffer)


def make_tcp_server(predictor, host: str = "127.0.0.1", port: int = 0) -> socketserver.ThreadingTCPServer:
    """Threaded TCP server; each connection is an independent session."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            try:
                serve_stream(predictor, self.rfile, self.wfile)
            except (BrokenPipeError, ConnectionResetError):
                pass

    socketserver.ThreadingTCPServer.allow_reuse_address = True
    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    return server
