import json
import socket
import threading

import numpy as np
import pytest

from fovex.predictors import PredictorDescriptor, make_linear_reference
from fovex.predictors.external import ExternalPredictor, LineChannel, close_socket


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w, c=3, lo=0.0, hi=1.0):
    return rng.uniform(lo, hi, size=(h, w, c))


def linear_predictor(h, w, c=3, k=3, seed=0, scale=1.0):
    return make_linear_reference(PredictorDescriptor(k, h, w, c, True, "linear"), seed=seed, scale=scale)


class ScriptedEndpoint:
    """In-process fake predictor endpoint over a socket pair.

    ``script`` receives each parsed request and returns the raw bytes to send
    back (or ``None`` to hang up).
    """

    def __init__(self, hello, script):
        self.client_sock, self.server_sock = socket.socketpair()
        self.requests = []
        self._hello = hello
        self._script = script
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        rfile = self.server_sock.makefile("rb")
        wfile = self.server_sock.makefile("wb")
        try:
            if self._hello is not None:
                wfile.write(self._hello if isinstance(self._hello, bytes) else (json.dumps(self._hello) + "\n").encode())
                wfile.flush()
            for line in iter(rfile.readline, b""):
                msg = json.loads(line)
                self.requests.append(msg)
                reply = self._script(msg)
                if reply is None:
                    break
                wfile.write(reply)
                wfile.flush()
        except OSError:
            pass
        finally:
            for f in (wfile, rfile):
                try:
                    f.close()
                except OSError:
                    pass
            self.server_sock.close()

    def connect(self, **kwargs):
        s = self.client_sock
        return ExternalPredictor(LineChannel(s.makefile("rb"), s.makefile("wb"), on_close=lambda: close_socket(s)), **kwargs)


def hello_msg(k=2, h=2, w=2, c=1, grad=False, name="scripted"):
    return {"type": "hello", "name": name, "num_classes": k, "input": {"h": h, "w": w, "c": c}, "supports_gradient": grad}


def reply(obj):
    return (json.dumps(obj) + "\n").encode()
