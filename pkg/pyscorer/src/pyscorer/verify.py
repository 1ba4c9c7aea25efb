"""Independent re-derivation of the caption loss over shared fixtures.

The optimizer package emits fixture rows of (caption distribution, step
distributions, expected loss). This module recomputes the loss from scratch,
plain Python floats and math.log, no shared code, and checks agreement to
1e-6. Catching a drift here means the two implementations disagree about
the objective itself, not about optimization.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

LOG_GUARD_EPS = 1e-8
TOLERANCE = 1e-6


def recompute_loss(caption_probs: list[float],
                   steps: list[list[float]]) -> float:
    """Cross-entropy of the mean step distribution under the caption bag."""
    t = len(steps)
    v = len(caption_probs)
    loss = 0.0
    for w in range(v):
        q = sum(step[w] for step in steps) / t
        loss -= caption_probs[w] * math.log(max(q, LOG_GUARD_EPS))
    return loss


def verify_bag_loss(path, err_stream=None) -> bool:
    """Replay every fixture row; report and fail on the first disagreement.

    An empty fixture file passes trivially with a warning, so a truncated
    artifact is visible without being treated as proof of conformance.
    """
    err = err_stream if err_stream is not None else sys.stderr
    text = Path(path).read_text(encoding="utf-8")
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows:
        print(f"warning: fixture file {path} is empty; nothing verified",
              file=err)
        return True

    failures = []
    for row in rows:
        got = recompute_loss(row["caption_probs"], row["steps"])
        want = float(row["expected_loss"])
        if not (abs(got - want) <= TOLERANCE):
            failures.append(
                f"fixture id {row['id']}: expected loss {want!r}, "
                f"recomputed {got!r} (diff {abs(got - want):.3e})")
    for msg in failures:
        print(msg, file=err)
    if not failures:
        print(f"verified {len(rows)} fixture rows within {TOLERANCE}",
              file=err)
    return not failures
