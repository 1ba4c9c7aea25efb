"""Record a golden wire transcript against the echo scorer.

Spawns the echo server as a subprocess, drives five seeded score requests
over its stdio (one of them asking for gradients), and writes every line in
both directions to fixtures/echo_transcript.jsonl. The conformance test
replays the client half and expects byte-identical server output, freezing
the wire format. Also writes fixtures/vocab_default.txt, the vocabulary the
transcript was recorded with.

Run from the repo root: python3 tools/make_golden_transcript.py
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from cropopt import default_vocabulary
from cropopt.scorerproto import ScoreRequest, encode_request

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
TRANSCRIPT_PATH = FIXTURES / "echo_transcript.jsonl"
VOCAB_PATH = FIXTURES / "vocab_default.txt"
OUT_SIZE = 8
CHANNELS = 3


def build_requests() -> list[str]:
    vocab = default_vocabulary()
    rng = np.random.default_rng(424242)
    lines = []
    for rid in range(1, 6):
        pixels = rng.random((OUT_SIZE, OUT_SIZE, CHANNELS)).astype(np.float32)
        lines.append(encode_request(ScoreRequest(
            id=rid, out_size=OUT_SIZE, channels=CHANNELS, pixels=pixels,
            vocab_hash=vocab.content_hash(), want_gradient=(rid == 4))))
    return lines


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    vocab = default_vocabulary()
    VOCAB_PATH.write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")

    requests = build_requests()
    proc = subprocess.Popen(
        [sys.executable, "-m", "cropopt.cli", "echo-scorer",
         "--vocab", str(VOCAB_PATH)],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    try:
        entries = []
        hello = proc.stdout.readline().decode("utf-8").rstrip("\n")
        if not hello:
            raise RuntimeError("echo server produced no hello line")
        entries.append({"dir": "s2c", "line": hello})
        for line in requests:
            proc.stdin.write(line.encode("utf-8") + b"\n")
            proc.stdin.flush()
            entries.append({"dir": "c2s", "line": line})
            reply = proc.stdout.readline().decode("utf-8").rstrip("\n")
            if not reply:
                raise RuntimeError("echo server closed mid-conversation")
            entries.append({"dir": "s2c", "line": reply})
    finally:
        proc.stdin.close()
        proc.wait(timeout=10)

    with TRANSCRIPT_PATH.open("w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")
    print(f"wrote {TRANSCRIPT_PATH} ({len(entries)} lines) and {VOCAB_PATH}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
