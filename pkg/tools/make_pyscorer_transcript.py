"""Record a golden fixture-mode conversation with the companion scorer.

Spawns `pyscorer serve --mode fixture` against the default vocabulary file
and freezes both sides of a short conversation into
fixtures/pyscorer_transcript.jsonl. Conformance tests replay the client
lines and require byte-identical server lines; regenerate only when the
documented fixture formula itself changes.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from cropopt import Vocabulary  # noqa: E402
from cropopt.scorerproto import ScoreRequest, encode_request  # noqa: E402

VOCAB_PATH = REPO_ROOT / "fixtures" / "vocab_default.txt"
OUT_PATH = REPO_ROOT / "fixtures" / "pyscorer_transcript.jsonl"


def build_requests(vhash: str) -> list[str]:
    rng = np.random.default_rng(515151)
    lines = []
    # Random RGB crop, single-channel crop with (ignored) gradient request,
    # constant gray crop, larger crop: one of each shape class.
    specs = [(8, 3, "random"), (16, 1, "random"), (12, 3, "gray"),
             (32, 3, "random")]
    for i, (n, c, kind) in enumerate(specs, start=1):
        if kind == "gray":
            pixels = np.full((n, n, c), 0.5, dtype=np.float64)
        else:
            pixels = rng.random((n, n, c))
        req = ScoreRequest(id=i, out_size=n, channels=c, pixels=pixels,
                           vocab_hash=vhash, want_gradient=(i == 2))
        lines.append(encode_request(req))
    return lines


def main() -> None:
    vocab = Vocabulary.from_file(VOCAB_PATH)
    requests = build_requests(vocab.content_hash())

    proc = subprocess.Popen(
        [sys.executable, "-m", "pyscorer", "serve", "--mode", "fixture",
         "--vocab", str(VOCAB_PATH)],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    entries = []
    try:
        hello = proc.stdout.readline().decode("utf-8").rstrip("\n")
        if not hello:
            raise RuntimeError("server exited without a hello line")
        entries.append({"dir": "s2c", "line": hello})
        for line in requests:
            proc.stdin.write(line.encode("utf-8") + b"\n")
            proc.stdin.flush()
            entries.append({"dir": "c2s", "line": line})
            reply = proc.stdout.readline().decode("utf-8").rstrip("\n")
            if not reply:
                raise RuntimeError("server closed before answering")
            entries.append({"dir": "s2c", "line": reply})
    finally:
        proc.stdin.close()
        proc.wait(timeout=10)

    with open(OUT_PATH, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")
    print(f"wrote {OUT_PATH} ({len(entries)} lines)")


if __name__ == "__main__":
    main()
