"""Models mode: wrap user-supplied pretrained captioning/aesthetic networks.

The checkpoints are not distributed with this package. Serving refuses to
start unless both TorchScript files exist in the checkpoint directory and
the optional torch dependency is installed, so a misconfigured deployment
fails loudly at startup instead of mid-run.

Gradients are never shipped in this mode: backpropagating through remote
models is out of scope, and the documented pairing is finite differences on
the client side.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

CAPTIONER_FILE = "captioner.pt"
AESTHETIC_FILE = "aesthetic.pt"


class StartupError(Exception):
    """Models mode cannot start; the message says what is missing."""


class ModelsScorer:
    """Forward crops through TorchScript captioner and aesthetic modules.

    The captioner module must map a (1, c, n, n) float tensor to (T, V)
    word-step logits; greedy decoding is assumed, i.e. the module itself
    advances its decoder with argmax tokens and returns the per-step logits
    it saw along the way. The aesthetic module maps the same input to one
    scalar. Both are softmax-/raw-score conventions described in the model
    cards this package expects alongside the checkpoints.
    """

    def __init__(self, checkpoint_dir, vocab_size: int):
        root = Path(checkpoint_dir)
        captioner_path = root / CAPTIONER_FILE
        aesthetic_path = root / AESTHETIC_FILE
        missing = [str(p) for p in (captioner_path, aesthetic_path)
                   if not p.is_file()]
        if missing:
            raise StartupError(
                "missing model checkpoint(s): " + ", ".join(missing))
        try:
            import torch
        except ImportError as exc:
            raise StartupError(
                "models mode needs the optional 'torch' dependency "
                "(pip install pyscorer[models])") from exc
        self._torch = torch
        self._vocab_size = vocab_size
        try:
            self._captioner = torch.jit.load(str(captioner_path),
                                             map_location="cpu").eval()
            self._aesthetic = torch.jit.load(str(aesthetic_path),
                                             map_location="cpu").eval()
        except Exception as exc:
            raise StartupError(f"cannot load checkpoints: {exc}") from exc

    def __call__(self, request) -> tuple[np.ndarray, float]:
        torch = self._torch
        pixels = np.transpose(request.pixels, (2, 0, 1))[None, ...]
        with torch.no_grad():
            batch = torch.from_numpy(np.ascontiguousarray(pixels)).float()
            logits = self._captioner(batch).cpu().numpy().astype(np.float64)
            score = float(self._aesthetic(batch).reshape(()).item())
        if logits.ndim != 2 or logits.shape[1] != self._vocab_size:
            raise ValueError(
                f"captioner returned shape {logits.shape}, expected "
                f"(T, {self._vocab_size})")
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        steps = shifted / shifted.sum(axis=1, keepdims=True)
        return steps, score
