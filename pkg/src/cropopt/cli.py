"""Command-line interface.

Subcommands: crop (optimize and emit the crop), landscape (loss heatmaps over
crop centers), gradcheck (analytic-vs-finite-difference validation), bench
(timings), echo-scorer (reference protocol double on stdio).

Exit codes: 0 success, 1 usage error, 2 runtime/scorer error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import _kernels, pipeline, sampler
from .errors import CropOptError
from .imagecore import Image, load_image, save_image
from .objective import Scorer, Vocabulary, bag_from_text, total_loss
from .pipeline import RunConfig, landscape_grid, run, trace_lines
from .sampler import CropParams, clip_params, multiscale_crop, theta_to_pixel_box
from .scorerproto import connect_scorer, serve_echo
from .synthetic import (BowlScorer, ConstantScorer, SyntheticScorer,
                        default_vocabulary, smooth_noise_image)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_BOWL_KEYS = {
    "ccx": "caption_center_x", "ccy": "caption_center_y",
    "cscale": "caption_scale", "cgain": "caption_gain",
    "acx": "aesthetic_center_x", "acy": "aesthetic_center_y",
    "ascale": "aesthetic_scale", "again": "aesthetic_gain",
    "ws": "scale_weight",
}


def _parse_bowl(spec: str) -> BowlScorer:
    """bowl:ccx=0.3,ccy=-0.1,cscale=0.5,... with unset keys at their defaults."""
    vals = {}
    if spec:
        for part in spec.split(","):
            if "=" not in part:
                raise ValueError(f"bowl parameter {part!r} is not key=value")
            key, _, raw = part.partition("=")
            key = key.strip()
            if key not in _BOWL_KEYS:
                raise ValueError(f"unknown bowl parameter {key!r} "
                                 f"(known: {', '.join(sorted(_BOWL_KEYS))})")
            vals[key] = float(raw)
    return BowlScorer(
        caption_center=(vals.get("ccx", 0.0), vals.get("ccy", 0.0)),
        caption_scale=vals.get("cscale", 0.5),
        caption_gain=vals.get("cgain", 2.0),
        aesthetic_center=(vals.get("acx", 0.0), vals.get("acy", 0.0)),
        aesthetic_scale=vals.get("ascale", 0.5),
        aesthetic_gain=vals.get("again", 2.0),
        scale_weight=vals.get("ws", 0.0),
    )


def _build_scorer(args) -> Scorer:
    spec = args.scorer
    if spec == "builtin":
        vocab = Vocabulary.from_file(args.vocab) if args.vocab else default_vocabulary()
        return SyntheticScorer(vocab, seed=args.seed)
    if spec == "constant":
        return ConstantScorer()
    if spec.startswith("bowl:") or spec == "bowl":
        return _parse_bowl(spec[5:] if spec.startswith("bowl:") else "")
    if spec.startswith(("cmd:", "tcp:")):
        if not args.vocab:
            raise CropOptError("--vocab is required for cmd:/tcp: scorers")
        vocab = Vocabulary.from_file(args.vocab)
        return connect_scorer(spec, vocab, timeout=args.timeout,
                              request_gradients=args.request_gradients)
    raise CropOptError(
        f"unknown scorer {spec!r} (builtin, constant, bowl:..., cmd:..., tcp:...)")


def _run_config(args) -> RunConfig:
    kwargs = dict(rng_seed=args.seed, lam=args.lam, out_size=args.out_size)
    if args.pyramid_scales:
        kwargs["scale_set"] = tuple(float(s) for s in args.pyramid_scales.split(","))
    for name in ("anneal", "min_scale", "restarts", "noise_sigma", "noise_kind",
                 "fd_step", "max_outer"):
        val = getattr(args, name, None)
        if val is not None:
            key = {"anneal": "anneal_factor", "max_outer": "max_iterations"}.get(name, name)
            kwargs[key] = val
    return RunConfig(**kwargs)


def _add_common(p: argparse.ArgumentParser, with_run_flags: bool = True) -> None:
    p.add_argument("--scorer", default="builtin",
                   help="builtin | constant | bowl:k=v,... | cmd:... | tcp:host:port")
    p.add_argument("--vocab", default=None, help="vocabulary file (one word per line)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01,
                   help="aesthetic term weight")
    p.add_argument("--out-size", type=int, default=224,
                   help="side of the resampled crop fed to the scorer")
    p.add_argument("--pyramid-scales", dest="pyramid_scales", default=None,
                   help="pyramid scale factors, comma separated (default 0.25,1/3,0.5,1)")
    p.add_argument("--timeout", type=float, default=30.0,
                   help="seconds to wait for a wire scorer response")
    p.add_argument("--request-gradients", action="store_true",
                   help="ask wire scorers for pixel gradients")
    if with_run_flags:
        p.add_argument("--anneal", type=float, default=None,
                       help="scale annealing factor (default 0.98)")
        p.add_argument("--min-scale", dest="min_scale", type=float, default=None)
        p.add_argument("--restarts", type=int, default=None,
                       help="restarts per scale (default 10)")
        p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
        p.add_argument("--noise-kind", dest="noise_kind",
                       choices=("gaussian", "uniform"), default=None)
        p.add_argument("--fd-step", dest="fd_step", type=float, default=None)
        p.add_argument("--max-outer", dest="max_outer", type=int, default=None,
                       help="cap on outer annealing iterations")


def _make_parser() -> _Parser:
    parser = _Parser(prog="cropopt",
                     description="Caption- and aesthetics-guided image cropping.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_crop = sub.add_parser("crop", help="optimize a crop for a caption")
    p_crop.add_argument("image", help="input image (PNG/PPM/PGM)")
    p_crop.add_argument("--caption", required=True)
    p_crop.add_argument("--out-dir", default=None,
                        help="output directory (default: alongside the input)")
    _add_common(p_crop)

    p_land = sub.add_parser("landscape", help="loss heatmaps over crop centers")
    p_land.add_argument("image")
    p_land.add_argument("--caption", required=True)
    p_land.add_argument("--scales", dest="crop_scales", default="0.75,0.5,0.3",
                        help="crop scales to map, comma separated")
    p_land.add_argument("--grid", type=int, default=41)
    p_land.add_argument("--out-dir", default=None)
    _add_common(p_land, with_run_flags=False)

    p_grad = sub.add_parser("gradcheck",
                            help="compare analytic and finite-difference gradients")
    p_grad.add_argument("--trials", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--out-size", type=int, default=48)
    p_grad.add_argument("--corrupt-jacobian", action="store_true",
                        help=argparse.SUPPRESS)

    p_bench = sub.add_parser("bench", help="timing table")
    p_bench.add_argument("--size", type=int, default=256)
    p_bench.add_argument("--iters", type=int, default=3,
                         help="outer iterations to time")
    p_bench.add_argument("--kernels", action="store_true",
                         help="also compare kernel backends")
    _add_common(p_bench, with_run_flags=False)

    p_echo = sub.add_parser("echo-scorer",
                            help="run the reference echo scorer on stdio")
    p_echo.add_argument("--vocab", default=None)
    p_echo.add_argument("--steps", type=int, default=3)
    p_echo.add_argument("--stall-after", type=int, default=None,
                        help="stop answering after N requests (timeout testing)")
    return parser


def _out_paths(args, suffixes):
    src = Path(args.image)
    out_dir = Path(args.out_dir) if args.out_dir else src.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    return {sfx: out_dir / f"{src.stem}{sfx}" for sfx in suffixes}


def _overlay(image: Image, box, thickness: int | None = None) -> Image:
    """Copy of the image with a red rectangle along the box edges."""
    left, top, right, bottom = box
    rgb = image.data if image.channels == 3 else np.repeat(image.data, 3, axis=2)
    canvas = rgb.copy()
    t = thickness or max(1, round(min(image.height, image.width) / 200))
    red = np.array([1.0, 0.0, 0.0])

    def paint(rs, re, cs, ce):
        canvas[max(rs, 0):max(re, 0), max(cs, 0):max(ce, 0)] = red

    paint(top, top + t, left, right)
    paint(bottom - t, bottom, left, right)
    paint(top, bottom, left, left + t)
    paint(top, bottom, right - t, right)
    return Image(canvas)


def cmd_crop(args) -> int:
    if not args.caption.strip():
        raise UsageError("caption must not be empty")
    image = load_image(args.image)
    scorer = _build_scorer(args)
    cfg = _run_config(args)
    try:
        result = run(image, args.caption, scorer, cfg)
    finally:
        scorer.close()

    box = theta_to_pixel_box(result.best_theta, image.width, image.height)
    left, top, right, bottom = box
    paths = _out_paths(args, (".crop.png", ".overlay.png", ".trace.txt"))

    crop_img = Image(image.data[top:bottom, left:right].copy())
    save_image(crop_img, paths[".crop.png"])
    save_image(_overlay(image, box), paths[".overlay.png"])

    lines = [f"box {left} {top} {right} {bottom}"] + trace_lines(result)
    paths[".trace.txt"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(f"box {left} {top} {right} {bottom}")
    print(f"theta x={result.best_theta.x:.6f} y={result.best_theta.y:.6f} "
          f"s={result.best_theta.s:.6f}")
    print(f"loss {result.best_loss:.9g}")
    print(f"wrote {paths['.crop.png']}")
    return 0


def _heatmap_png(totals: np.ndarray, path) -> None:
    lo = float(totals.min())
    hi = float(totals.max())
    t = np.zeros_like(totals) if hi <= lo else (totals - lo) / (hi - lo)
    rgb = np.stack([0.15 * t, 0.45 * t, t], axis=2)
    save_image(Image(rgb), path)


def cmd_landscape(args) -> int:
    if not args.caption.strip():
        raise UsageError("caption must not be empty")
    if args.grid < 3:
        raise UsageError("--grid must be at least 3")
    image = load_image(args.image)
    scorer = _build_scorer(args)
    try:
        bag = bag_from_text(args.caption, scorer.vocab)
        from .imagecore import build_pyramid
        scale_set = (tuple(float(s) for s in args.pyramid_scales.split(","))
                     if args.pyramid_scales else pipeline.DEFAULT_SCALE_SET)
        pyr = build_pyramid(image, scale_set)
        src = Path(args.image)
        out_dir = Path(args.out_dir) if args.out_dir else src.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        for scale_str in args.crop_scales.split(","):
            scale = float(scale_str)
            if not (0.0 < scale <= 1.0):
                raise UsageError(f"crop scale must be in (0, 1], got {scale}")
            rows = landscape_grid(pyr, bag, scorer, scale, args.grid,
                                  args.lam, args.out_size)
            base = out_dir / f"{src.stem}.landscape.{scale:g}"
            with open(f"{base}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x", "y", "scale", "caption", "aesthetic", "total"])
                for (x, y, cap, aest, tot) in rows:
                    writer.writerow([f"{x:.9g}", f"{y:.9g}", f"{scale:.9g}",
                                     f"{cap:.9g}", f"{aest:.9g}", f"{tot:.9g}"])
            side = int(round(np.sqrt(len(rows))))
            totals = np.array([r[4] for r in rows]).reshape(side, side)
            _heatmap_png(totals, f"{base}.png")
            print(f"wrote {base}.csv and {base}.png")
    finally:
        scorer.close()
    return 0


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.corrupt_jacobian:
        sampler._set_jacobian_corruption(2.0)
    try:
        worst = 0.0
        for trial in range(args.trials):
            rel = _gradcheck_one(args.seed + trial, args.out_size)
            worst = max(worst, rel)
        print(f"trials {args.trials}")
        print(f"max relative error {worst:.6e}")
        ok = worst < 1e-3
        print("PASS" if ok else "FAIL")
        return 0 if ok else 2
    finally:
        sampler._set_jacobian_corruption(1.0)


def sample_check_theta(pyramid, out_size: int, rng: np.random.Generator,
                       fd_step: float) -> CropParams:
    """Random feasible theta whose FD probe windows avoid interpolation kinks.

    The resampled crop is piecewise-bilinear in theta, so a central
    difference straddling a cell boundary measures the mean of two one-sided
    slopes instead of the derivative. Points are redrawn until every sample
    coordinate clears the lattice by a margin wider than the probe window.
    """
    need = 2.5 * fd_step
    best_theta, best_clear = None, -np.inf
    for _ in range(500):
        s = float(rng.uniform(0.35, 0.8))
        margin = 0.9 * (1.0 - s)
        theta = CropParams(float(rng.uniform(-margin, margin)),
                           float(rng.uniform(-margin, margin)), s)
        clear = sampler.lattice_clearance(pyramid, theta, out_size)
        if clear > need:
            return theta
        if clear > best_clear:
            best_theta, best_clear = theta, clear
    return best_theta


def _gradcheck_one(seed: int, out_size: int) -> float:
    """Max relative error between analytic and central-difference d/d(x, y)."""
    from .imagecore import build_pyramid

    rng = np.random.default_rng(seed)
    image = smooth_noise_image(96, 96, 3, seed=seed)
    pyr = build_pyramid(image, pipeline.DEFAULT_SCALE_SET)
    vocab = default_vocabulary()
    scorer = SyntheticScorer(vocab, seed=seed)
    words = rng.choice(vocab.tokens, size=3, replace=True)
    bag = bag_from_text(" ".join(words), vocab)
    h = 1e-5
    theta = sample_check_theta(pyr, out_size, rng, h)
    x, y, s = theta.x, theta.y, theta.s
    lam = 0.01

    crop = multiscale_crop(pyr, theta, out_size, with_jacobian=True)
    report = total_loss(crop, bag, scorer, lam=lam)

    def value(px, py):
        c = multiscale_crop(pyr, CropParams(px, py, s), out_size,
                            with_jacobian=False)
        return total_loss(c, bag, scorer, lam=lam).total

    fd = np.array([
        (value(x + h, y) - value(x - h, y)) / (2 * h),
        (value(x, y + h) - value(x, y - h)) / (2 * h),
    ])
    ana = report.grad_theta[:2]
    return float(np.max(np.abs(ana - fd) / np.maximum(np.abs(fd), 1e-6)))


class _CountingScorer(Scorer):
    def __init__(self, inner: Scorer):
        self.inner = inner
        self.calls = 0

    @property
    def vocab(self):
        return self.inner.vocab

    @property
    def provides_pixel_gradients(self):
        return self.inner.provides_pixel_gradients

    def evaluate(self, crop, want_gradient=False):
        self.calls += 1
        return self.inner.evaluate(crop, want_gradient)

    def close(self):
        self.inner.close()


def cmd_bench(args) -> int:
    print(f"{'metric':<32}{'value':>16}")
    print(f"{'kernel_backend':<32}{_kernels.backend_name:>16}")
    if args.iters > 0:
        image = smooth_noise_image(args.size, args.size, 3, seed=args.seed)
        scorer = _CountingScorer(_build_scorer(args))
        try:
            caption = scorer.vocab.tokens[0]
            cfg = RunConfig(rng_seed=args.seed, lam=args.lam,
                            out_size=args.out_size, max_iterations=args.iters)
            # Warm pass compiles the kernels so timings measure steady state.
            warm = RunConfig(rng_seed=args.seed, max_iterations=1, restarts=1,
                             out_size=args.out_size)
            run(image, caption, scorer, warm)
            calls0 = scorer.calls
            t0 = time.perf_counter()
            run(image, caption, scorer, cfg)
            elapsed = time.perf_counter() - t0
            calls = scorer.calls - calls0
        finally:
            scorer.close()
        print(f"{'outer_iterations':<32}{args.iters:>16d}")
        print(f"{'wall_s_total':<32}{elapsed:>16.3f}")
        print(f"{'wall_s_per_outer_iteration':<32}{elapsed / args.iters:>16.3f}")
        print(f"{'scorer_calls':<32}{calls:>16d}")
        print(f"{'wall_ms_per_scorer_call':<32}{1000 * elapsed / max(calls, 1):>16.3f}")
    if args.kernels:
        _bench_kernels(args)
    return 0


def _bench_kernels(args) -> None:
    from . import _kernels_numpy
    backends = [("numpy", _kernels_numpy)]
    try:
        from . import _kernels_numba
        backends.insert(0, ("numba", _kernels_numba))
    except ImportError:
        print(f"{'kernels_numba':<32}{'unavailable':>16}")
    level = smooth_noise_image(args.size, args.size, 3, seed=args.seed).data
    n = 224
    reps = 20
    for name, mod in backends:
        out = np.zeros((n, n, 3))
        jac = np.zeros((n, n, 3, 3))
        mod.sample_crop(level, 0.1, -0.05, 0.6, 1.0, out, jac, True)  # warm
        t0 = time.perf_counter()
        for _ in range(reps):
            out[...] = 0.0
            jac[...] = 0.0
            mod.sample_crop(level, 0.1, -0.05, 0.6, 1.0, out, jac, True)
        ms = 1000 * (time.perf_counter() - t0) / reps
        print(f"{'sample_ms_' + name:<32}{ms:>16.3f}")


def cmd_echo_scorer(args) -> int:
    vocab = Vocabulary.from_file(args.vocab) if args.vocab else default_vocabulary()
    serve_echo(vocab, steps=args.steps, stall_after=args.stall_after)
    return 0


class UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    handlers = {
        "crop": cmd_crop,
        "landscape": cmd_landscape,
        "gradcheck": cmd_gradcheck,
        "bench": cmd_bench,
        "echo-scorer": cmd_echo_scorer,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"cropopt: error: {exc}", file=sys.stderr)
        return 1
    except CropOptError as exc:
        print(f"cropopt: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cropopt: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"cropopt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
