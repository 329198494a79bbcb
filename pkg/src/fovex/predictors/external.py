"""Client for predictors living in another process or on another host."""

from __future__ import annotations

import logging
import queue
import shlex
import socket
import subprocess
import threading

import numpy as np

from ..errors import (
    ConnectionLost,
    HandshakeTimeout,
    MalformedMessage,
    RemoteError,
    ScoreLengthMismatch,
    TransportError,
)
from . import protocol
from .base import Predictor, PredictorDescriptor

logger = logging.getLogger(__name__)

_EOF = object()


class LineChannel:
    """Line-oriented duplex stream with a background reader.

    The reader thread lets :meth:`readline` honour a timeout on pipes and
    sockets alike.
    """

    def __init__(self, rfile, wfile, on_close=None):
        self._rfile = rfile
        self._wfile = wfile
        self._on_close = on_close
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self.closed = False

    def _pump(self):
        try:
            for line in iter(self._rfile.readline, b""):
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(_EOF)

    def readline(self, timeout=None) -> bytes:
        try:
            item = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError from None
        if item is _EOF:
            self._lines.put(_EOF)
            raise ConnectionLost("predictor endpoint closed the connection")
        return item

    def write(self, data: bytes):
        try:
            self._wfile.write(data)
            self._wfile.flush()
        except (OSError, ValueError) as exc:
            raise ConnectionLost(f"write to predictor endpoint failed: {exc}") from exc

    def close(self):
        if self.closed:
            return
        self.closed = True
        try:
            self._wfile.close()
        except OSError:
            pass
        # on_close must unblock the reader (EOF) before the read side is closed
        if self._on_close:
            self._on_close()
        try:
            self._rfile.close()
        except OSError:
            pass


class ExternalPredictor(Predictor):
    """Predictor speaking the newline-delimited JSON protocol.

    One request is in flight at a time; use one instance per worker.
    """

    def __init__(self, channel: LineChannel, handshake_timeout: float = 30.0, request_timeout: float | None = 300.0):
        self._channel = channel
        self._request_timeout = request_timeout
        self._next_id = 0
        self._lock = threading.Lock()
        try:
            line = channel.readline(timeout=handshake_timeout)
        except TimeoutError:
            channel.close()
            raise HandshakeTimeout(f"no hello within {handshake_timeout}s") from None
        except TransportError:
            channel.close()
            raise
        try:
            self.descriptor = PredictorDescriptor(**protocol.parse_hello(protocol.loads(line)))
        except (MalformedMessage, ValueError) as exc:
            channel.close()
            raise MalformedMessage(f"bad handshake: {exc}") from exc

    def _abort(self, exc: TransportError):
        self._channel.close()
        raise exc

    def _forward(self, image, target, want_gradient):
        if self._channel.closed:
            raise ConnectionLost("session already closed")
        with self._lock:
            req_id = self._next_id
            self._next_id += 1
            self._channel.write(protocol.dumps(protocol.forward(req_id, image, target, want_gradient)))
            try:
                line = self._channel.readline(timeout=self._request_timeout)
            except TimeoutError:
                self._abort(ConnectionLost(f"no reply to request {req_id} within {self._request_timeout}s"))
            except ConnectionLost as exc:
                self._abort(exc)
            try:
                msg = protocol.loads(line)
            except MalformedMessage as exc:
                self._abort(exc)
            if msg.get("id") != req_id:
                self._abort(MalformedMessage(f"reply id {msg.get('id')!r} does not echo request id {req_id}"))
            kind = msg["type"]
            if kind == "error":
                # the endpoint rejected this request but the session stays usable
                raise RemoteError(str(msg.get("message", "")))
            if kind != "scores":
                self._abort(MalformedMessage(f"unexpected message type {kind!r}"))
            values = msg.get("scores")
            if not isinstance(values, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
                self._abort(MalformedMessage("scores must be a list of numbers"))
            if len(values) != self.descriptor.num_classes:
                self._abort(
                    ScoreLengthMismatch(f"got {len(values)} scores, expected {self.descriptor.num_classes}")
                )
            grad = None
            if want_gradient:
                if "gradient_f32_b64" not in msg:
                    self._abort(MalformedMessage("gradient requested but not returned"))
                try:
                    flat = protocol.decode_f32(msg["gradient_f32_b64"], int(np.prod(self.descriptor.input_shape)))
                except MalformedMessage as exc:
                    self._abort(exc)
                grad = flat.reshape(self.descriptor.input_shape)
            return np.asarray(values, dtype=np.float64), grad

    def close(self):
        self._channel.close()


def spawn_subprocess(command, **kwargs) -> ExternalPredictor:
    """Start ``command`` and talk to it over its stdin/stdout."""
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0)
    except OSError as exc:
        raise ConnectionLost(f"could not start predictor process {argv!r}: {exc}") from exc

    def reap():
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    return ExternalPredictor(LineChannel(proc.stdout, proc.stdin, on_close=reap), **kwargs)


def dial_tcp(address: str, connect_timeout: float = 10.0, **kwargs) -> ExternalPredictor:
    host, _, port = address.rpartition(":")
    try:
        sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=connect_timeout)
    except (OSError, ValueError) as exc:
        raise ConnectionLost(f"could not connect to {address}: {exc}") from exc
    sock.settimeout(None)
    return ExternalPredictor(LineChannel(sock.makefile("rb"), sock.makefile("wb"), on_close=lambda: close_socket(sock)), **kwargs)


def close_socket(sock) -> None:
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    sock.close()


def connect_external(endpoint: str, **kwargs) -> ExternalPredictor:
    """``exec:<command>`` spawns a subprocess, ``tcp:<host:port>`` dials a socket."""
    kind, _, target = endpoint.partition(":")
    if kind == "exec" and target:
        return spawn_subprocess(target, **kwargs)
    if kind == "tcp" and target:
        return dial_tcp(target, **kwargs)
    raise ValueError(f"unsupported endpoint {endpoint!r}; use exec:<command> or tcp:<host:port>")
