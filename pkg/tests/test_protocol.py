import io
import json
import math
import sys
import threading

import numpy as np
import pytest

from fovex.errors import (
    CapabilityError,
    ConnectionLost,
    HandshakeTimeout,
    MalformedMessage,
    RemoteError,
    ScoreLengthMismatch,
)
from fovex.predictors import protocol
from fovex.predictors.external import connect_external, dial_tcp
from fovex.predictors.registry import build_builtin
from fovex.predictors.stub import handle_request, make_tcp_server, serve_stream

from conftest import ScriptedEndpoint, hello_msg, linear_predictor, reply


@pytest.fixture
def tcp_stub():
    pred = linear_predictor(4, 3, c=3, k=5, seed=11)
    server = make_tcp_server(pred)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    host, port = server.server_address
    yield pred, f"{host}:{port}"
    server.shutdown()
    server.server_close()


def test_f32_roundtrip_bit_exact(rng):
    x = rng.normal(size=97).astype(np.float32)
    back = protocol.decode_f32(protocol.encode_f32(x), 97)
    np.testing.assert_array_equal(back.astype(np.float32).view(np.uint32), x.view(np.uint32))
    # little-endian on the wire regardless of host order
    assert protocol.encode_f32([1.0]) == "AACAPw=="


@pytest.mark.parametrize("payload,count", [("!!", None), ("AAAA", 2), ("AAA=", None)])
def test_decode_rejects(payload, count):
    with pytest.raises(MalformedMessage):
        protocol.decode_f32(payload, count)


@pytest.mark.parametrize("line", [b"not json\n", b"[1,2]\n", b'{"id": 3}\n', b"\xff\xfe\n"])
def test_loads_rejects(line):
    with pytest.raises(MalformedMessage):
        protocol.loads(line)


def test_hello_has_required_fields():
    pred = build_builtin("linear", (4, 4, 3), {"num_classes": 3})
    out = io.BytesIO()
    serve_stream(pred, io.BytesIO(b""), out)
    msg = json.loads(out.getvalue().splitlines()[0])
    assert msg == {"type": "hello", "name": "builtin:linear", "num_classes": 3, "input": {"h": 4, "w": 4, "c": 3}, "supports_gradient": True}


def test_round_trip_100_randomized(tcp_stub, rng):
    local, addr = tcp_stub
    remote = dial_tcp(addr)
    assert remote.descriptor.num_classes == 5 and remote.descriptor.input_shape == (4, 3, 3)
    for i in range(100):
        img = rng.uniform(size=(4, 3, 3)).astype(np.float32).astype(np.float64)
        target = int(rng.integers(5)) if rng.uniform() < 0.7 else None
        want = target is not None and bool(rng.integers(2))
        out = remote.predict(img, target=target, want_gradient=want)
        ref = local.predict(img, target=target, want_gradient=want)
        # logits arrive exactly as the stub computed them
        np.testing.assert_array_equal(out.scores, ref.scores)
        if want:
            np.testing.assert_array_equal(out.input_gradient, ref.input_gradient.astype(np.float32).astype(np.float64))
        else:
            assert out.input_gradient is None
    assert remote._next_id == 100
    remote.close()


def test_ids_echo_over_scripted_endpoint(rng):
    def script(msg):
        return reply({"type": "scores", "id": msg["id"], "scores": [0.0, float(msg["id"])], "extra": "ignored"})

    ep = ScriptedEndpoint(hello_msg(), script)
    pred = ep.connect()
    for i in range(10):
        assert pred.predict(np.zeros((2, 2, 1))).scores[1] == i
    assert [r["id"] for r in ep.requests] == list(range(10))
    pred.close()


def test_gradient_request_against_linear_stub(tcp_stub, rng):
    local, addr = tcp_stub
    remote = dial_tcp(addr)
    g = remote.predict(rng.uniform(size=(4, 3, 3)), target=2, want_gradient=True).input_gradient
    np.testing.assert_array_equal(g, local.weights[2].reshape(4, 3, 3).astype(np.float32).astype(np.float64))
    remote.close()


def test_fixed_logits_probabilities():
    ep = ScriptedEndpoint(hello_msg(), lambda m: reply({"type": "scores", "id": m["id"], "scores": [1, 0]}))
    p = ep.connect().predict(np.zeros((2, 2, 1))).probabilities
    np.testing.assert_allclose(p, [math.e / (math.e + 1), 1 / (math.e + 1)], atol=1e-15)
    np.testing.assert_allclose(p, [0.7311, 0.2689], atol=1e-4)


def test_score_length_mismatch():
    ep = ScriptedEndpoint(hello_msg(k=3), lambda m: reply({"type": "scores", "id": m["id"], "scores": [1, 0]}))
    pred = ep.connect()
    with pytest.raises(ScoreLengthMismatch):
        pred.predict(np.zeros((2, 2, 1)))
    # the session is aborted after a violation
    with pytest.raises(ConnectionLost):
        pred.predict(np.zeros((2, 2, 1)))


def test_bad_id_is_malformed():
    ep = ScriptedEndpoint(hello_msg(), lambda m: reply({"type": "scores", "id": m["id"] + 7, "scores": [1, 0]}))
    with pytest.raises(MalformedMessage):
        ep.connect().predict(np.zeros((2, 2, 1)))


@pytest.mark.parametrize(
    "bad",
    [
        b"garbage\n",
        reply({"type": "hello", "id": 0}),
        reply({"type": "scores", "id": 0, "scores": ["a", "b"]}),
        reply({"type": "scores", "id": 0, "scores": [1, 0]}),  # gradient missing
        reply({"type": "scores", "id": 0, "scores": [1, 0], "gradient_f32_b64": "AAAA"}),
    ],
)
def test_malformed_replies(bad):
    ep = ScriptedEndpoint(hello_msg(grad=True), lambda m: bad)
    with pytest.raises(MalformedMessage):
        ep.connect().predict(np.zeros((2, 2, 1)), target=0, want_gradient=True)


def test_error_reply_raises_remote_error_and_session_survives():
    calls = []

    def script(m):
        calls.append(m)
        if len(calls) == 1:
            return reply({"type": "error", "id": m["id"], "message": "model crashed"})
        return reply({"type": "scores", "id": m["id"], "scores": [0.5, 0.5]})

    pred = ScriptedEndpoint(hello_msg(), script).connect()
    with pytest.raises(RemoteError, match="model crashed"):
        pred.predict(np.zeros((2, 2, 1)))
    np.testing.assert_allclose(pred.predict(np.zeros((2, 2, 1))).probabilities, 0.5)


def test_handshake_timeout():
    ep = ScriptedEndpoint(None, lambda m: None)
    with pytest.raises(HandshakeTimeout):
        ep.connect(handshake_timeout=0.2)


@pytest.mark.parametrize("hello", [{"type": "scores"}, {"type": "hello", "name": "x"}, b"{{{\n",
                                   dict(hello_msg(), supports_gradient="yes")])
def test_bad_handshake(hello):
    ep = ScriptedEndpoint(hello, lambda m: None)
    with pytest.raises(MalformedMessage):
        ep.connect(handshake_timeout=2)


def test_request_timeout():
    ep = ScriptedEndpoint(hello_msg(), lambda m: b"")
    pred = ep.connect(request_timeout=0.2)
    with pytest.raises(ConnectionLost):
        pred.predict(np.zeros((2, 2, 1)))


def test_connection_lost_mid_session():
    pred = ScriptedEndpoint(hello_msg(), lambda m: None).connect()
    with pytest.raises(ConnectionLost):
        pred.predict(np.zeros((2, 2, 1)))


def test_capability_gate_sends_nothing():
    ep = ScriptedEndpoint(hello_msg(grad=False), lambda m: reply({"type": "scores", "id": m["id"], "scores": [1, 0]}))
    pred = ep.connect()
    with pytest.raises(CapabilityError):
        pred.predict(np.zeros((2, 2, 1)), target=0, want_gradient=True)
    pred.predict(np.zeros((2, 2, 1)))
    assert len(ep.requests) == 1 and ep.requests[0]["want_gradient"] is False


def test_unreachable_endpoints():
    with pytest.raises(ConnectionLost):
        dial_tcp("127.0.0.1:1", connect_timeout=1)
    with pytest.raises(ConnectionLost):
        connect_external("exec:/nonexistent/binary")
    with pytest.raises(ValueError):
        connect_external("udp:1.2.3.4:5")


# -- server side -------------------------------------------------------------


def test_stub_error_paths(rng):
    pred = linear_predictor(2, 2, c=1, k=2)
    ok = protocol.forward(3, rng.uniform(size=(2, 2, 1)), 1, True)
    assert handle_request(pred, ok)["type"] == "scores"
    bad = [
        {"type": "ping", "id": 1},
        dict(ok, id=-1),
        dict(ok, id="x"),
        dict(ok, image_f32_b64="AAAA"),
        dict(ok, target=9),
        dict(ok, target=-1),
        dict(ok, want_gradient="yes"),
        dict(ok, target=None, want_gradient=True),
    ]
    for msg in bad:
        r = handle_request(pred, msg)
        assert r["type"] == "error" and r["id"] == msg.get("id") and r["message"]
    nograd = build_builtin("constant", (2, 2, 1))
    object.__setattr__(nograd.descriptor, "supports_gradient", False)
    assert handle_request(nograd, protocol.forward(0, np.zeros((2, 2, 1)), 0, True))["type"] == "error"


def test_stub_terminates_on_malformed_line(rng):
    pred = linear_predictor(2, 2, c=1, k=2)
    good = protocol.dumps(protocol.forward(0, rng.uniform(size=(2, 2, 1)), None, False))
    rfile = io.BytesIO(good + b"\n" + b"{broken\n" + good)
    out = io.BytesIO()
    serve_stream(pred, rfile, out)
    lines = [json.loads(x) for x in out.getvalue().splitlines()]
    assert [m["type"] for m in lines] == ["hello", "scores", "error"]
    assert lines[2]["id"] is None


def test_exec_stub_subprocess(rng):
    cmd = f"exec:{sys.executable} -m fovex stub-predictor --kind linear --input-size 3x3x1"
    remote = connect_external(cmd)
    local = build_builtin("linear", (3, 3, 1))
    img = rng.uniform(size=(3, 3, 1)).astype(np.float32).astype(np.float64)
    np.testing.assert_array_equal(remote.predict(img).scores, local.predict(img).scores)
    remote.close()
