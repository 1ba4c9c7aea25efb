"""Deterministic model-free scorer for cross-implementation conformance.

The responses depend only on the request pixels, the server seed, and the
vocabulary size, following the normative formula in docs/protocol.md: hash
a quantized 4x4 intensity grid of the crop into logits, softmax them into
per-step word distributions, and report the mean pixel intensity as the
aesthetic score. Anyone can re-derive the exact same numbers from the
document alone, which is the point.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

FIXTURE_STEPS = 5
_GRID = 4


def _cell_means(pixels: np.ndarray) -> np.ndarray:
    """Row-major means of the 4x4 coarse intensity grid, float64, 16 values."""
    n = pixels.shape[0]
    intensity = pixels.mean(axis=2)
    edges = [(a * n) // _GRID for a in range(_GRID + 1)]
    means = np.empty(_GRID * _GRID, dtype=np.float64)
    for a in range(_GRID):
        for b in range(_GRID):
            cell = intensity[edges[a]:edges[a + 1], edges[b]:edges[b + 1]]
            means[a * _GRID + b] = cell.mean()
    return means


def fixture_steps(pixels: np.ndarray, vocab_size: int,
                  steps: int = FIXTURE_STEPS, seed: int = 0) -> np.ndarray:
    """(steps, vocab_size) float64 distributions for one crop.

    pixels is (n, n, c) with n >= 4; smaller crops cannot fill the 4x4 cell
    grid and are rejected so every cell mean is well defined.
    """
    n = pixels.shape[0]
    if n < _GRID:
        raise ValueError(f"fixture mode requires out_size >= {_GRID}, got {n}")
    means = np.clip(_cell_means(pixels), 0.0, 1.0)
    # Ties round to even, matching both IEEE default rounding and np.rint.
    quant = [int(np.rint(m * 1e4)) for m in means]
    quant_bytes = b"".join(struct.pack("<Q", q) for q in quant)

    logits = np.empty((steps, vocab_size), dtype=np.float64)
    for t in range(steps):
        for w in range(vocab_size):
            digest = hashlib.sha256(
                struct.pack("<Q", seed) + struct.pack("<Q", t)
                + struct.pack("<Q", w) + quant_bytes).digest()
            u = struct.unpack("<Q", digest[:8])[0]
            logits[t, w] = (u / 2.0 ** 64) * 4.0 - 2.0

    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def fixture_aesthetic(pixels: np.ndarray) -> float:
    """Mean of every received pixel value."""
    return float(pixels.mean())
