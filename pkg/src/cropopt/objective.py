"""Caption and aesthetics objective.

The user's caption becomes a bag-of-words distribution p over a fixed
vocabulary. A scorer looks at the resampled crop and returns per-word-step
probability distributions over that vocabulary plus a scalar aesthetic score
g. The loss is

    total = H(p, mean of the step distributions) + lam * (-g)

so lower is better on both axes. When the crop carries a jacobian and the
scorer can propagate gradients to pixels, the chain rule collapses everything
to a 3-vector gradient with respect to (x, y, s).
"""

from __future__ import annotations

import hashlib
import math
import string
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import EmptyCaptionError, NumericError, ScorerError, VocabularyError
from .imagecore import Image
from .sampler import CropResult

LOG_GUARD_EPS = 1e-8

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Ordered, distinct, lowercase word list shared by caption and scorer."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if not tokens:
            raise VocabularyError("vocabulary is empty")
        seen = set()
        for tok in tokens:
            if not tok or tok != tok.lower() or any(ch.isspace() for ch in tok):
                raise VocabularyError(f"invalid vocabulary token {tok!r}")
            if tok in seen:
                raise VocabularyError(f"duplicate vocabulary token {tok!r}")
            seen.add(tok)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tokens)})

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        """Load one token per line; blank lines are ignored."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} is not in the vocabulary") from None

    def content_hash(self) -> str:
        """sha256 hex digest of the canonical serialization.

        Canonical form is the tokens joined by single newlines with one
        trailing newline, encoded UTF-8. Both ends of a scorer connection
        compute this to prove they hold the same vocabulary.
        """
        payload = ("\n".join(self.tokens) + "\n").encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True, eq=False)
class CaptionBag:
    """Bag-of-words distribution p over the vocabulary.

    probs sums to 1; source_len counts the recognized caption tokens and
    oov_count the dropped ones.
    """

    probs: np.ndarray
    source_len: int
    oov_count: int = 0

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if probs.ndim != 1:
            raise ValueError("bag probabilities must be a vector")
        if np.any(probs < 0.0) or not np.isfinite(probs).all():
            raise ValueError("bag probabilities must be finite and non-negative")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"bag probabilities sum to {probs.sum()}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)


def bag_from_text(text: str, vocab: Vocabulary) -> CaptionBag:
    """Average the one-hot vectors of the recognized caption words.

    Equivalent to relative word frequencies, so word order never matters.
    Unknown words are dropped (and counted); a caption with no recognized word
    raises EmptyCaptionError.
    """
    words = tokenize(text)
    counts = np.zeros(len(vocab), dtype=np.float64)
    kept = 0
    for word in words:
        if word in vocab:
            counts[vocab.index(word)] += 1.0
            kept += 1
    if kept == 0:
        raise EmptyCaptionError(
            f"no caption word is in the vocabulary ({len(words)} tokens, "
            f"{len(words)} unknown)" if words else "caption is empty")
    return CaptionBag(probs=counts / kept, source_len=kept,
                      oov_count=len(words) - kept)


def _caption_loss_terms(probs: np.ndarray, steps: np.ndarray):
    """Cross-entropy of the mean step distribution, plus dLoss/d(mean).

    The log argument is guarded as max(q, eps): same clamp-at-tiny protection
    as adding eps, but an exact one-hot match still gives exactly zero loss.
    Summation is exactly rounded so the loss cannot depend on the order the
    vocabulary happens to be listed in.
    """
    q = steps.mean(axis=0)
    safe = np.maximum(q, LOG_GUARD_EPS)
    loss = -math.fsum(probs * np.log(safe))
    dq = -probs / safe
    return loss, q, dq


def caption_loss(bag: CaptionBag, steps: np.ndarray):
    """Caption term and its gradient with respect to every step entry.

    steps is (T, V): one probability distribution over the vocabulary per
    generated word step. Returns (loss, grad) with grad shaped like steps;
    since the loss only sees the step mean, the gradient is the mean-side
    gradient spread evenly over the T steps.
    """
    steps = np.asarray(steps, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[0] < 1:
        raise VocabularyError(f"caption steps must be (T, V), got {steps.shape}")
    if steps.shape[1] != bag.probs.shape[0]:
        raise VocabularyError(
            f"caption steps have {steps.shape[1]} vocabulary entries, "
            f"bag has {bag.probs.shape[0]}")
    loss, _, dq = _caption_loss_terms(bag.probs, steps)
    grad = np.tile(dq / steps.shape[0], (steps.shape[0], 1))
    return loss, grad


def aesthetic_loss(score: float) -> float:
    """Negated aesthetic score (higher score = lower loss)."""
    if not np.isfinite(score):
        raise NumericError(f"aesthetic score is not finite: {score}")
    return -float(score)


# A pixel VJP maps (dLoss/d(mean caption distribution), dLoss/d(aesthetic))
# to dLoss/d(crop pixels), shaped like the crop.
PixelVJP = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True, eq=False)
class ScorerOutput:
    """One scorer evaluation of a crop.

    caption_steps is (T, V); aesthetic a finite scalar; pixel_vjp is None when
    the scorer cannot (or was not asked to) propagate gradients to pixels.
    """

    caption_steps: np.ndarray
    aesthetic: float
    pixel_vjp: Optional[PixelVJP] = None


class Scorer(ABC):
    """Anything that can judge a crop against the shared vocabulary.

    Implementations may be in-process math, subprocesses, or network peers;
    the optimizer only sees this interface.
    """

    concurrent_safe: bool = True

    @property
    @abstractmethod
    def vocab(self) -> Vocabulary: ...

    @property
    def provides_pixel_gradients(self) -> bool:
        return False

    @abstractmethod
    def evaluate(self, crop: Image, want_gradient: bool = False) -> ScorerOutput: ...

    def close(self) -> None:
        pass


@dataclass(frozen=True, eq=False)
class LossReport:
    """Loss breakdown at one crop.

    grad_theta is d(total)/d(x, y, s); grad_available says whether it was
    actually computed (it is zeros when either the crop had no jacobian or the
    scorer gave no pixel gradients).
    """

    caption_term: float
    aesthetic_term: float
    total: float
    grad_theta: np.ndarray
    grad_available: bool


def total_loss(crop: CropResult, bag: CaptionBag, scorer: Scorer,
               lam: float = 0.01) -> LossReport:
    """Score one crop: caption term + lam * aesthetic term, with chain rule.

    Scorer exceptions surface as ScorerError. The parameter gradient is the
    contraction of dLoss/d(pixels) with the crop jacobian and is only
    available when both halves exist.
    """
    want_grad = crop.jacobian is not None and scorer.provides_pixel_gradients
    try:
        output = scorer.evaluate(crop.image, want_gradient=want_grad)
    except ScorerError:
        raise
    except Exception as exc:
        raise ScorerError(f"scorer failed: {exc}") from exc

    steps = np.asarray(output.caption_steps, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[1] != bag.probs.shape[0]:
        raise VocabularyError(
            f"scorer returned steps shaped {steps.shape}, "
            f"vocabulary size is {bag.probs.shape[0]}")
    sums = steps.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ScorerError(
            f"caption step {bad} is not a distribution (sum {sums[bad]})")

    caption, _, dq = _caption_loss_terms(bag.probs, steps)
    aesthetic = aesthetic_loss(output.aesthetic)
    lam = float(lam)
    total = caption + lam * aesthetic

    grad_theta = np.zeros(3, dtype=np.float64)
    grad_available = False
    if want_grad and output.pixel_vjp is not None:
        # d(total)/d(aesthetic score) = -lam, folded into the scorer's VJP.
        dpix = output.pixel_vjp(dq, -lam)
        grad_theta = np.tensordot(dpix, crop.jacobian, axes=([0, 1, 2], [0, 1, 2]))
        grad_available = True

    if not (np.isfinite(total) and np.isfinite(grad_theta).all()):
        raise NumericError(f"non-finite loss or gradient (total={total})")
    grad_theta.setflags(write=False)
    return LossReport(caption_term=caption, aesthetic_term=aesthetic,
                      total=total, grad_theta=grad_theta,
                      grad_available=grad_available)
