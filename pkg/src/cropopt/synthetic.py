"""Self-contained scorers: no learned weights, everything computable in numpy.

Three families:

* SyntheticScorer - the CLI's builtin. A seeded linear-softmax captioning head
  over pooled color features, paired with a rule-of-thirds aesthetic. Smooth,
  deterministic, and cheap, with exact pixel gradients.
* BowlScorer - a validation double whose loss landscape is a known quadratic
  bowl in (x, y, s), read off a beacon image whose channel ramps encode the
  crop position. Used to test that the optimizer recovers planted optima.
* ConstantScorer - flat landscape, for degenerate-path tests.
"""

from __future__ import annotations

import numpy as np

from .errors import ScorerError
from .imagecore import Image, gaussian_blur
from .objective import Scorer, ScorerOutput, Vocabulary

_DEFAULT_WORDS = (
    "sky", "tree", "dog", "cat", "boat", "water", "grass", "cloud",
    "person", "building", "flower", "bird", "mountain", "road", "window",
    "light", "shadow", "red", "blue", "green", "sand", "snow", "field",
    "face",
)


def default_vocabulary() -> Vocabulary:
    return Vocabulary(_DEFAULT_WORDS)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SoftCaptioner:
    """Word-step distributions from pooled cell features.

    The crop is pooled into a grid x grid mean per channel; each of the
    ``steps`` word positions applies its own seeded linear map and softmax.
    Weights are drawn once per (seed, channel count), so outputs are a pure
    deterministic function of the pixels.
    """

    def __init__(self, vocab: Vocabulary, seed: int = 0, steps: int = 5,
                 grid: int = 4, weight_scale: float = 3.0):
        self.vocab = vocab
        self.seed = int(seed)
        self.steps = int(steps)
        self.grid = int(grid)
        self.weight_scale = float(weight_scale)
        self._weights: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _params(self, channels: int):
        cached = self._weights.get(channels)
        if cached is not None:
            return cached
        feat_len = self.grid * self.grid * channels
        rng = np.random.default_rng((self.seed, channels))
        w = rng.standard_normal((self.steps, len(self.vocab), feat_len))
        w *= self.weight_scale / np.sqrt(feat_len)
        b = 0.1 * rng.standard_normal((self.steps, len(self.vocab)))
        self._weights[channels] = (w, b)
        return w, b

    def _features(self, pixels: np.ndarray):
        n = pixels.shape[0]
        g = self.grid
        if n < g:
            raise ScorerError(f"crop side {n} is smaller than the pooling grid {g}")
        edges = [(i * n) // g for i in range(g + 1)]
        feats = np.empty(g * g * pixels.shape[2], dtype=np.float64)
        cells = []
        pos = 0
        for ci in range(g):
            for cj in range(g):
                block = pixels[edges[ci]:edges[ci + 1], edges[cj]:edges[cj + 1]]
                for k in range(pixels.shape[2]):
                    feats[pos] = block[:, :, k].mean()
                    pos += 1
                cells.append((edges[ci], edges[ci + 1], edges[cj], edges[cj + 1]))
        return feats, cells

    def evaluate(self, pixels: np.ndarray):
        """Return (steps array (T, V), vjp) for raw (n, n, c) pixels.

        vjp maps dLoss/d(mean step distribution) back to dLoss/d(pixels).
        """
        w, b = self._params(pixels.shape[2])
        feats, cells = self._features(pixels)
        logits = w @ feats + b
        steps = _softmax(logits)

        def vjp(dq: np.ndarray) -> np.ndarray:
            dfeat = np.zeros_like(feats)
            ds = dq / self.steps
            for t in range(self.steps):
                s_t = steps[t]
                dlogit = s_t * (ds - float(ds @ s_t))
                dfeat += w[t].T @ dlogit
            dpix = np.zeros_like(pixels)
            c = pixels.shape[2]
            pos = 0
            for (r0, r1, c0, c1) in cells:
                count = (r1 - r0) * (c1 - c0)
                for k in range(c):
                    dpix[r0:r1, c0:c1, k] += dfeat[pos] / count
                    pos += 1
            return dpix

        return steps, vjp


# The four rule-of-thirds intersection points in unit coordinates.
_THIRDS = np.array([[1 / 3, 1 / 3], [1 / 3, 2 / 3],
                    [2 / 3, 1 / 3], [2 / 3, 2 / 3]], dtype=np.float64)


class ThirdsAesthetic:
    """Composition score: centroid near a thirds point, calm borders.

    The intensity-weighted centroid (weights = pixel intensity + a small floor
    so flat crops stay well-defined) is compared against the four thirds
    points through a soft minimum of smoothed distances; border busyness is
    the mean squared first difference along the outermost pixel rows and
    columns. score = w_thirds * (-softmin distance) + w_border * (-border
    energy), so both terms are maximal at 0.
    """

    def __init__(self, w_thirds: float = 1.0, w_border: float = 1.0,
                 tau: float = 0.05, smooth_eps: float = 1e-3,
                 weight_floor: float = 1e-3):
        self.w_thirds = float(w_thirds)
        self.w_border = float(w_border)
        self.tau = float(tau)
        self.smooth_eps = float(smooth_eps)
        self.weight_floor = float(weight_floor)

    def evaluate(self, pixels: np.ndarray):
        h, w, c = pixels.shape
        m = pixels.mean(axis=2)
        xs = (np.arange(w, dtype=np.float64) + 0.5) / w
        ys = (np.arange(h, dtype=np.float64) + 0.5) / h
        wgt = m + self.weight_floor
        wsum = float(wgt.sum())
        cx = float((wgt * xs[None, :]).sum() / wsum)
        cy = float((wgt * ys[:, None]).sum() / wsum)

        eta = self.smooth_eps
        dx = cx - _THIRDS[:, 0]
        dy = cy - _THIRDS[:, 1]
        root = np.sqrt(dx * dx + dy * dy + eta * eta)
        dist = root - eta
        dmin = float(dist.min())
        expw = np.exp(-(dist - dmin) / self.tau)
        softmin = dmin - self.tau * np.log(float(expw.mean()))

        gx = m[:, 1:] - m[:, :-1]
        gy = m[1:, :] - m[:-1, :]
        border_count = 2 * h + 2 * w
        border = (float((gx[:, 0] ** 2).sum()) + float((gx[:, -1] ** 2).sum())
                  + float((gy[0, :] ** 2).sum()) + float((gy[-1, :] ** 2).sum())
                  ) / border_count
        score = self.w_thirds * (-softmin) + self.w_border * (-border)

        def vjp(dg: float) -> np.ndarray:
            # Soft minimum: d(softmin)/d(dist_i) are the softmin weights.
            omega = expw / expw.sum()
            ddist_dcx = dx / root
            ddist_dcy = dy / root
            dscore_dcx = self.w_thirds * -float(omega @ ddist_dcx)
            dscore_dcy = self.w_thirds * -float(omega @ ddist_dcy)
            # Centroid: d(cx)/d(weight_ij) = (x_j - cx) / wsum.
            dm = (dscore_dcx * (xs[None, :] - cx)
                  + dscore_dcy * (ys[:, None] - cy)) / wsum
            # Border energy back through the squared differences.
            coeff = -self.w_border * 2.0 / border_count
            dm[:, 1] += coeff * gx[:, 0]
            dm[:, 0] -= coeff * gx[:, 0]
            dm[:, -1] += coeff * gx[:, -1]
            dm[:, -2] -= coeff * gx[:, -1]
            dm[1, :] += coeff * gy[0, :]
            dm[0, :] -= coeff * gy[0, :]
            dm[-1, :] += coeff * gy[-1, :]
            dm[-2, :] -= coeff * gy[-1, :]
            return (dg / c) * np.repeat(dm[:, :, None], c, axis=2)

        return score, vjp


class SyntheticScorer(Scorer):
    """SoftCaptioner + ThirdsAesthetic behind the scorer interface."""

    concurrent_safe = True

    def __init__(self, vocab: Vocabulary | None = None, seed: int = 0,
                 steps: int = 5, captioner: SoftCaptioner | None = None,
                 aesthetic: ThirdsAesthetic | None = None):
        self._vocab = vocab if vocab is not None else default_vocabulary()
        self.captioner = captioner or SoftCaptioner(self._vocab, seed=seed,
                                                    steps=steps)
        self.aesthetic = aesthetic or ThirdsAesthetic()

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def provides_pixel_gradients(self) -> bool:
        return True

    def evaluate(self, crop: Image, want_gradient: bool = False) -> ScorerOutput:
        pixels = crop.data
        steps, cap_vjp = self.captioner.evaluate(pixels)
        score, aest_vjp = self.aesthetic.evaluate(pixels)
        vjp = None
        if want_gradient:
            def vjp(dq, dg):
                return cap_vjp(np.asarray(dq, dtype=np.float64)) + aest_vjp(float(dg))
        return ScorerOutput(caption_steps=steps, aesthetic=float(score),
                            pixel_vjp=vjp)


def smooth_noise_image(height: int, width: int, channels: int = 3,
                       seed: int = 0, cell: int = 8, sigma: float = 2.0) -> Image:
    """Seeded random image with gentle large-scale structure.

    Coarse uniform noise is expanded cell-wise and Gaussian-blurred, giving a
    smooth field whose bilinear resampling is nearly free of interpolation
    kinks. The gradient checker and benchmarks run on these.
    """
    rng = np.random.default_rng(seed)
    hc = (height + cell - 1) // cell
    wc = (width + cell - 1) // cell
    base = rng.random((hc, wc, channels))
    up = np.repeat(np.repeat(base, cell, axis=0), cell, axis=1)
    return gaussian_blur(Image(up[:height, :width]), sigma)


def beacon_image(height: int = 256, width: int = 256) -> Image:
    """Coordinate-encoding test image.

    Channel 0 ramps 0..1 left to right, channel 1 ramps top to bottom,
    channel 2 is flat 0.5. Channel means of any crop therefore reveal where
    the crop sits, which is what BowlScorer reads back.
    """
    xs = np.linspace(0.0, 1.0, width)
    ys = np.linspace(0.0, 1.0, height)
    data = np.empty((height, width, 3), dtype=np.float64)
    data[:, :, 0] = xs[None, :]
    data[:, :, 1] = ys[:, None]
    data[:, :, 2] = 0.5
    return Image(data)


class BowlScorer(Scorer):
    """Quadratic-bowl loss landscape around planted crop parameters.

    Reads crop statistics off a beacon image: mean of channel 0 gives the
    horizontal center estimate, mean of channel 1 the vertical one, and
    sqrt(12) * std of channel 0 the crop scale estimate. The caption step puts
    probability exp(-caption_gain * dA^2) on "target" (dA the distance of the
    estimates to the caption bowl center), so the caption cross-entropy
    against a {"target": 1} bag is exactly caption_gain * dA^2. The aesthetic
    score is -aesthetic_gain * dB^2 around its own center. Exact pixel
    gradients included.
    """

    concurrent_safe = True

    def __init__(self, caption_center=(0.0, 0.0), caption_scale: float = 0.5,
                 caption_gain: float = 2.0, aesthetic_center=(0.0, 0.0),
                 aesthetic_scale: float = 0.5, aesthetic_gain: float = 2.0,
                 scale_weight: float = 0.0):
        self.caption_center = (float(caption_center[0]), float(caption_center[1]))
        self.caption_scale = float(caption_scale)
        self.caption_gain = float(caption_gain)
        self.aesthetic_center = (float(aesthetic_center[0]), float(aesthetic_center[1]))
        self.aesthetic_scale = float(aesthetic_scale)
        self.aesthetic_gain = float(aesthetic_gain)
        self.scale_weight = float(scale_weight)
        self._vocab = Vocabulary(("target", "off"))

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def provides_pixel_gradients(self) -> bool:
        return True

    def evaluate(self, crop: Image, want_gradient: bool = False) -> ScorerOutput:
        if crop.channels != 3:
            raise ScorerError("bowl scorer needs the 3-channel beacon image")
        pix = crop.data
        npix = pix.shape[0] * pix.shape[1]
        mean0 = float(pix[:, :, 0].mean())
        mean1 = float(pix[:, :, 1].mean())
        std0 = float(pix[:, :, 0].std())
        mx = 2.0 * mean0 - 1.0
        my = 2.0 * mean1 - 1.0
        shat = np.sqrt(12.0) * std0

        def bowl(center, scale_target):
            ex = mx - center[0]
            ey = my - center[1]
            es = shat - scale_target
            return ex * ex + ey * ey + self.scale_weight * es * es, (ex, ey, es)

        da2, (cax, cay, cas) = bowl(self.caption_center, self.caption_scale)
        db2, (aax, aay, aas) = bowl(self.aesthetic_center, self.aesthetic_scale)
        q_target = float(np.exp(-self.caption_gain * da2))
        steps = np.array([[q_target, 1.0 - q_target]], dtype=np.float64)
        score = -self.aesthetic_gain * db2

        vjp = None
        if want_gradient:
            def vjp(dq, dg):
                dq = np.asarray(dq, dtype=np.float64)
                # Per-pixel partials of the three statistics.
                dmx = np.zeros_like(pix)
                dmx[:, :, 0] = 2.0 / npix
                dmy = np.zeros_like(pix)
                dmy[:, :, 1] = 2.0 / npix
                dsh = np.zeros_like(pix)
                if std0 > 1e-12:
                    dsh[:, :, 0] = np.sqrt(12.0) * (pix[:, :, 0] - mean0) / (npix * std0)
                dda2 = 2.0 * cax * dmx + 2.0 * cay * dmy \
                    + self.scale_weight * 2.0 * cas * dsh
                ddb2 = 2.0 * aax * dmx + 2.0 * aay * dmy \
                    + self.scale_weight * 2.0 * aas * dsh
                dq_target = q_target * -self.caption_gain * dda2
                dscore = -self.aesthetic_gain * ddb2
                return (dq[0] - dq[1]) * dq_target + float(dg) * dscore
        return ScorerOutput(caption_steps=steps, aesthetic=score, pixel_vjp=vjp)


class ConstantScorer(Scorer):
    """Flat landscape: uniform caption steps, fixed aesthetic, zero gradients."""

    concurrent_safe = True

    def __init__(self, vocab: Vocabulary | None = None, steps: int = 3,
                 aesthetic: float = 0.0):
        self._vocab = vocab if vocab is not None else Vocabulary(("target", "off"))
        self.steps = int(steps)
        self.aesthetic = float(aesthetic)

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def provides_pixel_gradients(self) -> bool:
        return True

    def evaluate(self, crop: Image, want_gradient: bool = False) -> ScorerOutput:
        v = len(self._vocab)
        steps = np.full((self.steps, v), 1.0 / v, dtype=np.float64)
        vjp = None
        if want_gradient:
            def vjp(dq, dg):
                return np.zeros_like(crop.data)
        return ScorerOutput(caption_steps=steps, aesthetic=self.aesthetic,
                            pixel_vjp=vjp)
