"""Server-side implementation of the crop-scorer/1 wire protocol.

One JSON object per newline-terminated UTF-8 line. The server emits a hello
line first, then answers each score request with exactly one result line
carrying the same id. Pixel buffers arrive as base64-encoded row-major
little-endian float32. See docs/protocol.md at the repository root for the
normative message reference; this module is written against that document,
not against the client's source.
"""

from __future__ import annotations

import base64
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

PROTOCOL_VERSION = "crop-scorer/1"


class FrameError(Exception):
    """A line that cannot be understood as a protocol message."""


class VocabularyFileError(Exception):
    """The vocabulary file violates the documented format."""


def load_vocabulary(path) -> tuple[str, ...]:
    """One token per line; blank lines ignored; tokens validated.

    Tokens must be non-empty, lowercase, whitespace-free, and distinct, and
    their order is significant: it fixes the layout of every distribution.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    tokens = tuple(line.strip() for line in lines if line.strip())
    if not tokens:
        raise VocabularyFileError(f"vocabulary file {path} has no tokens")
    seen = set()
    for tok in tokens:
        if tok != tok.lower() or any(ch.isspace() for ch in tok):
            raise VocabularyFileError(f"invalid vocabulary token {tok!r}")
        if tok in seen:
            raise VocabularyFileError(f"duplicate vocabulary token {tok!r}")
        seen.add(tok)
    return tokens


def vocab_hash(tokens: tuple[str, ...]) -> str:
    """Canonical vocabulary digest: sha256 of newline-joined tokens + "\\n"."""
    payload = ("\n".join(tokens) + "\n").encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str, count: int, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise FrameError(f"{what}: invalid base64: {exc}") from exc
    if len(raw) != count * 4:
        raise FrameError(f"{what}: expected {count * 4} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


@dataclass(frozen=True)
class Request:
    id: int
    out_size: int
    channels: int
    pixels: np.ndarray  # (n, n, c) float64, decoded from the f32 buffer
    vocab_hash: str
    want_gradient: bool


def parse_request(line: str) -> Request:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FrameError(f"unparseable request line: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("type") != "score":
        raise FrameError(f"expected a score request, got {obj.get('type')!r}")
    try:
        rid = int(obj["id"])
        n = int(obj["out_size"])
        c = int(obj["channels"])
        if n < 2 or c < 1:
            raise FrameError(f"bad crop shape {n}x{n}x{c}")
        pixels = decode_f32(obj["pixels"], n * n * c, "pixel buffer")
        vhash = str(obj["vocab_hash"])
        want_gradient = bool(obj.get("want_gradient", False))
    except KeyError as exc:
        raise FrameError(f"request missing field {exc}") from exc
    return Request(id=rid, out_size=n, channels=c,
                   pixels=pixels.reshape(n, n, c), vocab_hash=vhash,
                   want_gradient=want_gradient)


def hello_line(vhash: str, name: str) -> str:
    """Handshake line. This server is stop-and-wait, never concurrent-safe."""
    obj = {
        "type": "hello",
        "protocol": PROTOCOL_VERSION,
        "vocab_hash": vhash,
        "concurrent_safe": False,
        "name": name,
    }
    return json.dumps(obj, separators=(",", ":"))


def result_line(rid: int, steps: np.ndarray, aesthetic: float) -> str:
    """Success result without gradients (this server never ships them)."""
    obj = {
        "type": "result",
        "id": int(rid),
        "caption_steps": [[float(v) for v in row] for row in steps],
        "aesthetic": float(aesthetic),
        "grad_caption_mean": None,
        "grad_aesthetic": None,
    }
    return json.dumps(obj, separators=(",", ":"))


def error_line(rid: int, message: str) -> str:
    obj = {"type": "result", "id": int(rid), "error": str(message)}
    return json.dumps(obj, separators=(",", ":"))


# A handler maps one parsed request to (caption_steps, aesthetic); raising
# ValueError turns into an error result for that request.
Handler = Callable[[Request], tuple[np.ndarray, float]]


def serve(handler: Handler, tokens: tuple[str, ...], name: str,
          in_stream=None, out_stream=None) -> None:
    """Run the stop-and-wait request loop until the input stream closes.

    Unparseable lines are answered with an error result carrying id -1; a
    request whose vocab_hash does not match ours, or that the handler
    rejects, gets an error result under its own id. The connection survives
    all of these.
    """
    fin = in_stream if in_stream is not None else sys.stdin.buffer
    fout = out_stream if out_stream is not None else sys.stdout.buffer
    vhash = vocab_hash(tokens)

    def emit(line: str) -> None:
        fout.write(line.encode("utf-8") + b"\n")
        fout.flush()

    emit(hello_line(vhash, name))
    for raw in fin:
        line = raw.decode("utf-8").strip()
        if not line:
            continue
        try:
            req = parse_request(line)
        except FrameError as exc:
            emit(error_line(-1, str(exc)))
            continue
        if req.vocab_hash != vhash:
            emit(error_line(req.id,
                            f"vocabulary hash mismatch: client sent "
                            f"{req.vocab_hash}, server holds {vhash}"))
            continue
        try:
            steps, aesthetic = handler(req)
        except ValueError as exc:
            emit(error_line(req.id, str(exc)))
            continue
        emit(result_line(req.id, steps, aesthetic))
