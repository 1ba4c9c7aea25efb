"""The outer optimization loop.

Scale is never optimized directly: it follows a geometric annealing schedule
(anneal_factor ** i, stopping when it drops under min_scale). At each scale,
K restarts start from noisy copies of the current center estimate, each runs
a box-constrained L-BFGS over the crop center, the optima are averaged into
the next center, and the best loss ever evaluated wins. Scorers without pixel
gradients fall back to central finite differences over (x, y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CropOptError, NumericError, PipelineError, ScorerError
from .imagecore import BlurPolicy, Image, Pyramid, build_pyramid
from .objective import CaptionBag, LossReport, Scorer, bag_from_text, total_loss
from .sampler import CropParams, clip_params, multiscale_crop
from .solver import SolveTrace, SolverConfig, lbfgs_minimize

DEFAULT_SCALE_SET = (0.25, 1.0 / 3.0, 0.5, 1.0)


@dataclass(frozen=True)
class RunConfig:
    """Knobs of the annealed multi-restart optimization."""

    anneal_factor: float = 0.98
    min_scale: float = 0.25
    restarts: int = 10
    noise_sigma: float = 0.05
    noise_kind: str = "gaussian"
    lam: float = 0.01
    scale_set: tuple[float, ...] = DEFAULT_SCALE_SET
    out_size: int = 224
    rng_seed: int = 0
    fd_step: float = 1e-3
    max_iterations: int | None = None
    blur: BlurPolicy = field(default_factory=BlurPolicy)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not (0.0 < self.anneal_factor < 1.0):
            raise ValueError(f"anneal_factor must be in (0, 1), got {self.anneal_factor}")
        if not (0.0 < self.min_scale < 1.0):
            raise ValueError(f"min_scale must be in (0, 1), got {self.min_scale}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise_kind not in ("gaussian", "uniform"):
            raise ValueError(f"noise_kind must be gaussian or uniform, got {self.noise_kind!r}")
        if self.fd_step <= 0.0:
            raise ValueError("fd_step must be positive")
        if self.out_size < 2:
            raise ValueError("out_size must be >= 2")


def anneal_scale(i: int, factor: float) -> float:
    """Crop scale at outer iteration i: factor ** i."""
    if i < 0:
        raise ValueError(f"iteration index must be >= 0, got {i}")
    return float(factor ** i)


def schedule_scales(cfg: RunConfig) -> list[float]:
    """All scales the run will visit, in order, largest (1.0) first."""
    scales = []
    i = 0
    while True:
        sc = anneal_scale(i, cfg.anneal_factor)
        if sc < cfg.min_scale:
            break
        scales.append(sc)
        i += 1
        if cfg.max_iterations is not None and i >= cfg.max_iterations:
            break
    return scales


def perturb(center, sigma: float, kind: str, rng: np.random.Generator,
            scale: float):
    """Noisy restart start: center + per-coordinate noise, clipped feasible.

    kind "gaussian" draws N(0, sigma^2) per coordinate, "uniform" draws
    U(-sigma, sigma). The result is clipped into the feasible box at the
    given crop scale.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    if kind == "gaussian":
        noise = rng.normal(0.0, sigma, size=2) if sigma > 0.0 else np.zeros(2)
    elif kind == "uniform":
        noise = rng.uniform(-sigma, sigma, size=2) if sigma > 0.0 else np.zeros(2)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    theta = clip_params(CropParams(center[0] + float(noise[0]),
                                   center[1] + float(noise[1]), scale))
    return theta.x, theta.y


def evaluate_objective(pyramid: Pyramid, bag: CaptionBag, scorer: Scorer,
                       theta: CropParams, lam: float, out_size: int,
                       with_gradient: bool = False) -> LossReport:
    """Total loss of one crop; values-only unless the gradient is asked for."""
    crop = multiscale_crop(pyramid, theta, out_size, with_jacobian=with_gradient)
    return total_loss(crop, bag, scorer, lam=lam)


def _make_objective(pyramid, bag, scorer, scale, cfg: RunConfig):
    """(x, y) -> (loss, grad) closure for the solver at one fixed scale.

    Uses the analytic chain-rule gradient when the scorer propagates pixel
    gradients; otherwise central finite differences over the two coordinates
    (four extra evaluations), with probe points clamped into the feasible box.
    """
    bound = 1.0 - scale
    use_analytic = scorer.provides_pixel_gradients

    def value_at(x, y):
        rep = evaluate_objective(pyramid, bag, scorer,
                                 CropParams(x, y, scale), cfg.lam, cfg.out_size)
        return rep.total

    def fun(z):
        x, y = float(z[0]), float(z[1])
        if use_analytic:
            rep = evaluate_objective(pyramid, bag, scorer, CropParams(x, y, scale),
                                     cfg.lam, cfg.out_size, with_gradient=True)
            if rep.grad_available:
                return rep.total, rep.grad_theta[:2].copy()
            f0 = rep.total
        else:
            f0 = value_at(x, y)
        h = cfg.fd_step
        grad = np.zeros(2)
        for i, v in enumerate((x, y)):
            varr = [x, y]
            lo = max(v - h, -bound)
            hi = min(v + h, bound)
            if hi <= lo:
                grad[i] = 0.0
                continue
            varr[i] = hi
            f_hi = value_at(varr[0], varr[1])
            varr[i] = lo
            f_lo = value_at(varr[0], varr[1])
            grad[i] = (f_hi - f_lo) / (hi - lo)
        return f0, grad

    return fun


@dataclass(frozen=True)
class RestartRecord:
    start: tuple[float, float]
    optimum: tuple[float, float]
    loss: float


@dataclass(frozen=True)
class ScaleRecord:
    index: int
    scale: float
    aggregate: tuple[float, float]
    aggregate_loss: float
    restarts: tuple[RestartRecord, ...]


@dataclass(frozen=True)
class CropRun:
    """Outcome of one full optimization run."""

    best_theta: CropParams
    best_loss: float
    per_scale: tuple[ScaleRecord, ...]
    iterations_run: int


def restart_solve(pyramid: Pyramid, bag: CaptionBag, scorer: Scorer,
                  scale: float, start, cfg: RunConfig):
    """One local solve over the crop center at a fixed scale.

    Returns ((x, y), loss, trace) where the point is the best evaluated by
    the solver and loss its objective value.
    """
    bound = 1.0 - scale
    box = (np.array([-bound, -bound]), np.array([bound, bound]))
    fun = _make_objective(pyramid, bag, scorer, scale, cfg)
    x0 = np.array([start[0], start[1]], dtype=np.float64)
    best, trace = lbfgs_minimize(fun, x0, bounds=box, config=cfg.solver)
    return (float(best[0]), float(best[1])), float(trace.best_loss), trace


def solve_restarts(pyramid, bag, scorer, scale, starts, cfg: RunConfig):
    """Run one restart_solve per start point, in the given order."""
    records = []
    for start in starts:
        optimum, loss, _ = restart_solve(pyramid, bag, scorer, scale, start, cfg)
        records.append(RestartRecord(start=(float(start[0]), float(start[1])),
                                     optimum=optimum, loss=loss))
    return records


def aggregate_restarts(optima, next_scale: float | None = None):
    """Coordinate-wise mean of the restart optima, clipped at the next scale.

    Uses exactly-rounded summation so the mean does not depend on the order
    the restarts finished in.
    """
    pts = list(optima)
    if not pts:
        raise ValueError("no optima to aggregate")
    mx = math.fsum(p[0] for p in pts) / len(pts)
    my = math.fsum(p[1] for p in pts) / len(pts)
    if next_scale is not None:
        theta = clip_params(CropParams(mx, my, next_scale))
        return theta.x, theta.y
    return mx, my


def run(image: Image, caption: str, scorer: Scorer, cfg: RunConfig | None = None) -> CropRun:
    """Optimize the crop of ``image`` for ``caption`` under ``scorer``.

    Follows the annealing schedule from scale 1.0 down to min_scale; at each
    scale runs ``restarts`` perturbed local solves from the current center,
    evaluates the loss at each optimum and at their mean, and keeps the best
    crop parameters seen anywhere. A scorer or numeric failure aborts the run
    with the completed scales attached to the raised PipelineError.
    """
    cfg = cfg or RunConfig()
    bag = bag_from_text(caption, scorer.vocab)
    pyramid = build_pyramid(image, cfg.scale_set, cfg.blur)
    rng = np.random.default_rng(cfg.rng_seed)
    scales = schedule_scales(cfg)

    center = (0.0, 0.0)
    best_theta: CropParams | None = None
    best_loss = math.inf
    completed: list[ScaleRecord] = []

    try:
        for i, scale in enumerate(scales):
            center_theta = clip_params(CropParams(center[0], center[1], scale))
            center = (center_theta.x, center_theta.y)
            starts = [perturb(center, cfg.noise_sigma, cfg.noise_kind, rng, scale)
                      for _ in range(cfg.restarts)]
            records = solve_restarts(pyramid, bag, scorer, scale, starts, cfg)
            for rec in records:
                if rec.loss < best_loss:
                    best_loss = rec.loss
                    best_theta = CropParams(rec.optimum[0], rec.optimum[1], scale)

            agg = aggregate_restarts([r.optimum for r in records], next_scale=scale)
            agg_report = evaluate_objective(pyramid, bag, scorer,
                                            CropParams(agg[0], agg[1], scale),
                                            cfg.lam, cfg.out_size)
            if agg_report.total < best_loss:
                best_loss = agg_report.total
                best_theta = CropParams(agg[0], agg[1], scale)

            completed.append(ScaleRecord(index=i, scale=scale, aggregate=agg,
                                         aggregate_loss=agg_report.total,
                                         restarts=tuple(records)))
            center = agg
    except (ScorerError, NumericError) as exc:
        partial = None
        if best_theta is not None:
            partial = CropRun(best_theta=best_theta, best_loss=best_loss,
                              per_scale=tuple(completed),
                              iterations_run=len(completed))
        raise PipelineError(f"run aborted at scale index {len(completed)}: {exc}",
                            partial_run=partial) from exc

    if best_theta is None:
        raise CropOptError("empty annealing schedule; check min_scale")
    return CropRun(best_theta=best_theta, best_loss=best_loss,
                   per_scale=tuple(completed), iterations_run=len(completed))


def landscape_grid(pyramid: Pyramid, bag: CaptionBag, scorer: Scorer,
                   scale: float, grid_n: int, lam: float, out_size: int):
    """Loss surface over feasible crop centers at one fixed scale.

    Returns a list of (x, y, caption_term, aesthetic_term, total) rows, the
    x coordinate varying fastest. The grid spans the feasible box
    [-(1-scale), 1-scale] per axis; at scale 1 the box is the single point
    (0, 0).
    """
    if grid_n < 3:
        raise ValueError(f"grid size must be >= 3, got {grid_n}")
    bound = 1.0 - scale
    if bound <= 0.0:
        coords = np.array([0.0])
    else:
        coords = np.linspace(-bound, bound, grid_n)
    rows = []
    for y in coords:
        for x in coords:
            rep = evaluate_objective(pyramid, bag, scorer,
                                     CropParams(float(x), float(y), scale),
                                     lam, out_size)
            rows.append((float(x), float(y), rep.caption_term,
                         rep.aesthetic_term, rep.total))
    return rows


def _fmt(v: float) -> str:
    """Full-precision float formatting so trace files are reproducible."""
    return f"{v:.17g}"


def trace_lines(result: CropRun) -> list[str]:
    """Human-readable, deterministic text rendering of a run."""
    lines = [
        "# crop optimization trace",
        (f"best x={_fmt(result.best_theta.x)} y={_fmt(result.best_theta.y)} "
         f"s={_fmt(result.best_theta.s)} loss={_fmt(result.best_loss)}"),
        f"iterations {result.iterations_run}",
    ]
    for sc in result.per_scale:
        lines.append(
            f"scale[{sc.index}] s={_fmt(sc.scale)} "
            f"agg=({_fmt(sc.aggregate[0])}, {_fmt(sc.aggregate[1])}) "
            f"agg_loss={_fmt(sc.aggregate_loss)}")
        for k, rec in enumerate(sc.restarts):
            lines.append(
                f"  restart[{k}] start=({_fmt(rec.start[0])}, {_fmt(rec.start[1])}) "
                f"opt=({_fmt(rec.optimum[0])}, {_fmt(rec.optimum[1])}) "
                f"loss={_fmt(rec.loss)}")
    return lines


def write_trace(result: CropRun, path) -> None:
    from pathlib import Path

    Path(path).write_text("\n".join(trace_lines(result)) + "\n", encoding="utf-8")
