"""Freeze caption-loss cases for cross-implementation checks.

Writes fixtures/bag_loss_cases.jsonl, one JSON object per line with a
caption word-frequency vector, a stack of per-step probability rows, and
the cross-entropy the reference implementation produces. Any independent
implementation of the loss can be validated against these numbers.

Run from the repo root: python3 tools/make_bag_loss_fixtures.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from cropopt import CaptionBag, caption_loss

OUT_PATH = Path(__file__).resolve().parent.parent / "fixtures" / "bag_loss_cases.jsonl"
N_CASES = 30


def make_case(idx: int) -> dict:
    rng = np.random.default_rng(71 + idx)
    vocab_size = int(rng.integers(2, 13))
    steps_n = int(rng.integers(1, 7))
    tokens = [f"w{k}" for k in range(vocab_size)]

    counts = np.zeros(vocab_size)
    for _ in range(int(rng.integers(1, 7))):
        counts[rng.integers(0, vocab_size)] += 1.0
    probs = counts / counts.sum()

    # Sparse concentration parameters produce some probabilities far below
    # the log guard, which is exactly the regime worth freezing.
    alpha = float(rng.uniform(0.25, 3.0))
    steps = rng.dirichlet(np.full(vocab_size, alpha), size=steps_n)

    bag = CaptionBag(probs=probs, source_len=int(counts.sum()))
    loss, _ = caption_loss(bag, steps)
    return {
        "id": idx,
        "tokens": tokens,
        "caption_probs": probs.tolist(),
        "steps": steps.tolist(),
        "expected_loss": float(loss),
    }


def main() -> int:
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    with OUT_PATH.open("w", encoding="utf-8") as fh:
        for idx in range(N_CASES):
            fh.write(json.dumps(make_case(idx)) + "\n")
    print(f"wrote {OUT_PATH}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
