"""Wire protocol "crop-scorer/1": external scorers over NDJSON.

One JSON object per newline-terminated UTF-8 line. The server speaks first
with a hello line carrying the protocol version, its vocabulary hash, and a
concurrent-safe flag; after that the client sends score requests with
strictly increasing ids and the server answers each with exactly one result
line bearing the same id (stop-and-wait). Pixel (and optional gradient)
buffers travel as base64-encoded row-major little-endian float32.

See docs/protocol.md for the full message reference and the golden
transcript fixture.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
import sys
import threading
import time
import queue as queue_mod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (DesyncError, IncompatibleScorerError, ProtocolError,
                     ScorerError, ScorerTimeoutError, VocabularyError)
from .imagecore import Image
from .objective import Scorer, ScorerOutput, Vocabulary

PROTOCOL_VERSION = "crop-scorer/1"
DEFAULT_TIMEOUT = 30.0


def encode_f32(arr: np.ndarray) -> str:
    """Row-major little-endian float32 bytes, base64-encoded."""
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str, count: int, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise ProtocolError(f"{what}: invalid base64: {exc}") from exc
    if len(raw) != count * 4:
        raise ProtocolError(
            f"{what}: expected {count * 4} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


@dataclass(frozen=True, eq=False)
class ScoreRequest:
    id: int
    out_size: int
    channels: int
    pixels: np.ndarray  # (n, n, c) float values
    vocab_hash: str
    want_gradient: bool


@dataclass(frozen=True, eq=False)
class ScoreResponse:
    id: int
    caption_steps: Optional[np.ndarray]      # (T, V)
    aesthetic: Optional[float]
    grad_caption_mean: Optional[np.ndarray]  # (V, n, n, c)
    grad_aesthetic: Optional[np.ndarray]     # (n, n, c)
    error: Optional[str] = None


def encode_request(req: ScoreRequest) -> str:
    obj = {
        "type": "score",
        "id": int(req.id),
        "out_size": int(req.out_size),
        "channels": int(req.channels),
        "pixels": encode_f32(req.pixels),
        "vocab_hash": req.vocab_hash,
        "want_gradient": bool(req.want_gradient),
    }
    return json.dumps(obj, separators=(",", ":"))


def decode_request(line: str) -> ScoreRequest:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"unparseable request line: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("type") != "score":
        raise ProtocolError(f"expected a score request, got {obj.get('type')!r}")
    try:
        rid = int(obj["id"])
        n = int(obj["out_size"])
        c = int(obj["channels"])
        pixels = decode_f32(obj["pixels"], n * n * c, "pixel buffer")
        vocab_hash = str(obj["vocab_hash"])
        want_gradient = bool(obj.get("want_gradient", False))
    except KeyError as exc:
        raise ProtocolError(f"request missing field {exc}") from exc
    return ScoreRequest(id=rid, out_size=n, channels=c,
                        pixels=pixels.reshape(n, n, c),
                        vocab_hash=vocab_hash, want_gradient=want_gradient)


def encode_response(resp: ScoreResponse) -> str:
    obj: dict = {"type": "result", "id": int(resp.id)}
    if resp.error is not None:
        obj["error"] = str(resp.error)
    else:
        steps = np.asarray(resp.caption_steps, dtype=np.float64)
        obj["caption_steps"] = [[float(v) for v in row] for row in steps]
        obj["aesthetic"] = float(resp.aesthetic)
        if resp.grad_caption_mean is not None:
            obj["grad_caption_mean"] = [encode_f32(g) for g in resp.grad_caption_mean]
            obj["grad_aesthetic"] = encode_f32(resp.grad_aesthetic)
        else:
            obj["grad_caption_mean"] = None
            obj["grad_aesthetic"] = None
    return json.dumps(obj, separators=(",", ":"))


def decode_response(line: str, expected_id: int, out_size: int,
                    channels: int) -> ScoreResponse:
    """Parse and validate one result line against the request it answers."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"unparseable response line: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("type") != "result":
        raise ProtocolError(f"expected a result line, got {obj.get('type')!r}")
    if "id" not in obj:
        raise ProtocolError("response has no id")
    rid = int(obj["id"])
    if rid != expected_id:
        raise DesyncError(f"response id {rid} does not match request id "
                          f"{expected_id}; connection is desynchronized")
    if obj.get("error") is not None:
        return ScoreResponse(id=rid, caption_steps=None, aesthetic=None,
                             grad_caption_mean=None, grad_aesthetic=None,
                             error=str(obj["error"]))
    try:
        steps_raw = obj["caption_steps"]
        aesthetic = float(obj["aesthetic"])
    except KeyError as exc:
        raise ProtocolError(f"response missing field {exc}") from exc
    steps = np.asarray(steps_raw, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[0] < 1:
        raise ProtocolError(f"caption_steps must be a (T, V) matrix, "
                            f"got shape {steps.shape}")
    sums = steps.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > 1e-6)[0]
    if bad.size:
        t = int(bad[0])
        raise ProtocolError(f"caption step {t} sums to {sums[t]!r}, not 1")

    grad_q = None
    grad_a = None
    if obj.get("grad_caption_mean") is not None:
        pix_count = out_size * out_size * channels
        bufs = obj["grad_caption_mean"]
        if len(bufs) != steps.shape[1]:
            raise ProtocolError(
                f"expected {steps.shape[1]} caption gradient buffers, "
                f"got {len(bufs)}")
        grad_q = np.stack([
            decode_f32(b, pix_count, f"caption gradient {i}")
            .reshape(out_size, out_size, channels)
            for i, b in enumerate(bufs)])
        if obj.get("grad_aesthetic") is None:
            raise ProtocolError("grad_caption_mean present without grad_aesthetic")
        grad_a = decode_f32(obj["grad_aesthetic"], pix_count,
                            "aesthetic gradient").reshape(out_size, out_size,
                                                          channels)
    return ScoreResponse(id=rid, caption_steps=steps, aesthetic=aesthetic,
                         grad_caption_mean=grad_q, grad_aesthetic=grad_a)


def encode_hello(vocab_hash: str, concurrent_safe: bool, name: str) -> str:
    obj = {
        "type": "hello",
        "protocol": PROTOCOL_VERSION,
        "vocab_hash": vocab_hash,
        "concurrent_safe": bool(concurrent_safe),
        "name": name,
    }
    return json.dumps(obj, separators=(",", ":"))


class _ProcessTransport:
    """Child process over stdin/stdout pipes, with a reader thread so
    receives can time out without blocking forever on a wedged child."""

    def __init__(self, argv: list[str]):
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL)
        except OSError as exc:
            raise ScorerError(f"cannot start scorer process {argv!r}: {exc}") from exc
        self._lines: queue_mod.Queue = queue_mod.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        try:
            for raw in self.proc.stdout:
                self._lines.put(raw)
        except Exception:
            pass
        self._lines.put(None)

    def send_line(self, line: str) -> None:
        try:
            self.proc.stdin.write(line.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerError(f"scorer process closed its input: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        try:
            raw = self._lines.get(timeout=timeout)
        except queue_mod.Empty:
            raise ScorerTimeoutError(
                f"scorer did not answer within {timeout} s") from None
        if raw is None:
            raise ScorerError("scorer process closed the connection")
        return raw.decode("utf-8")

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _TcpTransport:
    def __init__(self, host: str, port: int):
        try:
            self.sock = socket.create_connection((host, port), timeout=DEFAULT_TIMEOUT)
        except OSError as exc:
            raise ScorerError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._file = self.sock.makefile("rb")

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise ScorerError(f"send failed: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        self.sock.settimeout(timeout)
        try:
            raw = self._file.readline()
        except (TimeoutError, socket.timeout):
            raise ScorerTimeoutError(
                f"scorer did not answer within {timeout} s") from None
        except OSError as exc:
            raise ScorerError(f"receive failed: {exc}") from exc
        if not raw:
            raise ScorerError("scorer closed the connection")
        return raw.decode("utf-8")

    def close(self) -> None:
        try:
            self._file.close()
            self.sock.close()
        except OSError:
            pass


class WireScorer(Scorer):
    """ScorerContract adapter over a protocol transport.

    Performs the hello handshake at construction: the protocol version must
    match exactly and the server's vocab_hash must equal the local
    vocabulary's. Requests carry strictly increasing ids; any id mismatch in
    a response poisons the connection and every later call fails fast.
    """

    def __init__(self, transport, vocab: Vocabulary,
                 timeout: float = DEFAULT_TIMEOUT,
                 request_gradients: bool = False):
        self._transport = transport
        self._vocab = vocab
        self._timeout = float(timeout)
        self._request_gradients = bool(request_gradients)
        self._next_id = 1
        self._poisoned = False

        line = transport.recv_line(self._timeout)
        try:
            hello = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable hello line: {exc}") from exc
        if not isinstance(hello, dict) or hello.get("type") != "hello":
            raise ProtocolError(f"expected hello, got {hello.get('type')!r}")
        version = hello.get("protocol")
        if version != PROTOCOL_VERSION:
            raise IncompatibleScorerError(
                f"scorer speaks {version!r}, this client speaks "
                f"{PROTOCOL_VERSION!r}")
        remote_hash = hello.get("vocab_hash")
        if remote_hash != vocab.content_hash():
            raise VocabularyError(
                f"scorer vocabulary hash {remote_hash} does not match local "
                f"vocabulary {vocab.content_hash()}")
        self.concurrent_safe = bool(hello.get("concurrent_safe", False))
        self.name = hello.get("name", "")

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def provides_pixel_gradients(self) -> bool:
        return self._request_gradients

    def evaluate(self, crop: Image, want_gradient: bool = False) -> ScorerOutput:
        if self._poisoned:
            raise DesyncError("connection previously desynchronized; reconnect")
        rid = self._next_id
        self._next_id += 1
        n = crop.height
        req = ScoreRequest(id=rid, out_size=n, channels=crop.channels,
                           pixels=crop.data, vocab_hash=self._vocab.content_hash(),
                           want_gradient=bool(want_gradient))
        self._transport.send_line(encode_request(req))
        line = self._transport.recv_line(self._timeout)
        try:
            resp = decode_response(line, rid, n, crop.channels)
        except DesyncError:
            self._poisoned = True
            raise
        if resp.error is not None:
            raise ScorerError(f"scorer reported an error: {resp.error}")
        if resp.caption_steps.shape[1] != len(self._vocab):
            raise VocabularyError(
                f"scorer returned {resp.caption_steps.shape[1]} vocabulary "
                f"entries, expected {len(self._vocab)}")

        vjp = None
        if resp.grad_caption_mean is not None:
            grad_q = resp.grad_caption_mean
            grad_a = resp.grad_aesthetic

            def vjp(dq, dg):
                dq = np.asarray(dq, dtype=np.float64)
                return np.tensordot(dq, grad_q, axes=([0], [0])) + float(dg) * grad_a
        return ScorerOutput(caption_steps=resp.caption_steps,
                            aesthetic=float(resp.aesthetic), pixel_vjp=vjp)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def connect_scorer(endpoint: str, vocab: Vocabulary,
                   timeout: float = DEFAULT_TIMEOUT,
                   request_gradients: bool = False) -> WireScorer:
    """Open a scorer connection from an endpoint string.

    ``cmd:<command line>`` spawns a child process speaking the protocol on
    its stdio; ``tcp:<host>:<port>`` connects to a listening server.
    """
    if endpoint.startswith("cmd:"):
        argv = shlex.split(endpoint[4:])
        if not argv:
            raise ValueError("cmd: endpoint has no command")
        transport = _ProcessTransport(argv)
    elif endpoint.startswith("tcp:"):
        rest = endpoint[4:]
        host, sep, port = rest.rpartition(":")
        if not sep or not host:
            raise ValueError(f"tcp endpoint must be tcp:host:port, got {endpoint!r}")
        transport = _TcpTransport(host, int(port))
    else:
        raise ValueError(f"unknown scorer endpoint {endpoint!r} "
                         "(expected cmd:... or tcp:host:port)")
    try:
        return WireScorer(transport, vocab, timeout=timeout,
                          request_gradients=request_gradients)
    except Exception:
        transport.close()
        raise


def serve_echo(vocab: Vocabulary, steps: int = 3,
               stall_after: int | None = None,
               in_stream=None, out_stream=None) -> None:
    """Reference protocol double: uniform caption steps, g = mean intensity.

    When gradients are requested it replies with the exact ones for those
    outputs: zero caption gradients and a constant 1/P aesthetic gradient.
    ``stall_after`` makes the server stop answering after that many requests
    (it sleeps instead), which is how the client timeout path gets tested.
    """
    fin = in_stream if in_stream is not None else sys.stdin.buffer
    fout = out_stream if out_stream is not None else sys.stdout.buffer

    def emit(line: str) -> None:
        fout.write(line.encode("utf-8") + b"\n")
        fout.flush()

    emit(encode_hello(vocab.content_hash(), concurrent_safe=False, name="echo"))
    v = len(vocab)
    answered = 0
    for raw in fin:
        line = raw.decode("utf-8").strip()
        if not line:
            continue
        try:
            req = decode_request(line)
        except ProtocolError as exc:
            emit(encode_response(ScoreResponse(
                id=-1, caption_steps=None, aesthetic=None,
                grad_caption_mean=None, grad_aesthetic=None, error=str(exc))))
            continue
        if stall_after is not None and answered >= stall_after:
            while True:
                time.sleep(3600.0)
        step_arr = np.full((steps, v), 1.0 / v, dtype=np.float64)
        mean_val = float(req.pixels.mean())
        grad_q = None
        grad_a = None
        if req.want_gradient:
            pix = req.out_size * req.out_size * req.channels
            grad_q = np.zeros((v, req.out_size, req.out_size, req.channels))
            grad_a = np.full((req.out_size, req.out_size, req.channels), 1.0 / pix)
        emit(encode_response(ScoreResponse(
            id=req.id, caption_steps=step_arr, aesthetic=mean_val,
            grad_caption_mean=grad_q, grad_aesthetic=grad_a)))
        answered += 1
