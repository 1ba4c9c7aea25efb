"""Box-constrained L-BFGS.

Limited-memory BFGS with the two-loop recursion, a strong-Wolfe line search
(bracket + zoom), and simple box handling: trial points are clamped into the
box coordinate-wise, coordinates sitting on a bound with the search direction
pointing outward are frozen for that iteration, and convergence is measured on
the projected gradient. A failed line search is not an error; the solver
returns the best point it evaluated along the way and says why it stopped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericError

_CURVATURE_MIN = 1e-10
_ACTIVE_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    memory: int = 10
    max_iters: int = 50
    grad_tol: float = 1e-6
    step_tol: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 20

    def __post_init__(self):
        if not (0.0 < self.c1 < self.c2 < 1.0):
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory < 1 or self.max_iters < 1:
            raise ValueError("memory and max_iters must be positive")


@dataclass(frozen=True)
class IterateRecord:
    point: tuple[float, ...]
    loss: float
    grad_norm: float


@dataclass(frozen=True)
class SolveTrace:
    """Accepted iterates (including the start), stop reason, and diagnostics.

    termination is one of "gradient", "step", "max-iters",
    "line-search-failure". best_loss is the lowest objective seen at any
    evaluation, which is the value at the returned point; curvature_skips
    counts update pairs rejected by the s.y > 1e-10 safeguard.
    """

    iterates: tuple[IterateRecord, ...]
    termination: str
    best_loss: float
    curvature_skips: int


def _two_loop(g: np.ndarray, mem: list) -> np.ndarray:
    """H.g via the standard two-loop recursion; gamma-scaled initial matrix."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = mem[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _interp_quadratic(tlo, flo, dlo, thi, fhi):
    """Minimizer of the quadratic through (tlo, flo, dlo) and (thi, fhi)."""
    denom = 2.0 * (fhi - flo - dlo * (thi - tlo))
    if denom == 0.0:
        return 0.5 * (tlo + thi)
    t = tlo - dlo * (thi - tlo) ** 2 / denom
    left = min(tlo, thi)
    width = abs(thi - tlo)
    if not (left + 0.1 * width <= t <= left + 0.9 * width):
        t = 0.5 * (tlo + thi)
    return t


def lbfgs_minimize(fun: Callable, x0, bounds=None,
                   config: SolverConfig | None = None,
                   exact_step: Optional[Callable] = None):
    """Minimize fun(x) -> (value, gradient) inside an optional box.

    bounds is (lower, upper) arrays or None for unconstrained. Returns
    (best_point, SolveTrace); the point is the best ever evaluated, including
    line-search trials, so a line-search failure still hands back progress.

    exact_step is a test hook: a callable (x, d) -> t that replaces the Wolfe
    search with a prescribed step length, accepted unconditionally. Production
    callers leave it None.
    """
    cfg = config or SolverConfig()
    x = np.asarray(x0, dtype=np.float64).copy()
    dim = x.size
    if bounds is None:
        lo = np.full(dim, -np.inf)
        hi = np.full(dim, np.inf)
    else:
        lo = np.asarray(bounds[0], dtype=np.float64).copy()
        hi = np.asarray(bounds[1], dtype=np.float64).copy()
        if lo.shape != x.shape or hi.shape != x.shape:
            raise ValueError("bounds must match the dimension of x0")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9):
            raise ValueError(f"start point {x} is outside the box")

    def project(z):
        return np.minimum(np.maximum(z, lo), hi)

    best_x = None
    best_f = np.inf

    def ev(z):
        nonlocal best_x, best_f
        fv, gv = fun(z)
        fv = float(fv)
        gv = np.asarray(gv, dtype=np.float64)
        if not np.isfinite(fv) or not np.isfinite(gv).all():
            raise NumericError(f"objective returned non-finite values at {z}",
                               point=z.copy())
        if fv < best_f:
            best_f = fv
            best_x = z.copy()
        return fv, gv

    x = project(x)
    f, g = ev(x)
    records = [IterateRecord(tuple(x), f, float(np.linalg.norm(g)))]
    mem: list = []
    skips = 0
    termination = "max-iters"

    for _ in range(cfg.max_iters):
        pgrad = x - project(x - g)
        if np.abs(pgrad).max() <= cfg.grad_tol:
            termination = "gradient"
            break

        if mem:
            d = -_two_loop(g, mem)
        else:
            d = -g.copy()
        # Freeze coordinates pinned on a bound when the direction points out.
        frozen = (((x - lo <= _ACTIVE_TOL) & (d < 0.0))
                  | ((hi - x <= _ACTIVE_TOL) & (d > 0.0)))
        d = np.where(frozen, 0.0, d)
        dphi0 = float(d @ g)
        if dphi0 >= 0.0 or not d.any():
            # Bad model direction: drop the memory, retry with steepest descent.
            mem.clear()
            d = -g.copy()
            frozen = (((x - lo <= _ACTIVE_TOL) & (d < 0.0))
                      | ((hi - x <= _ACTIVE_TOL) & (d > 0.0)))
            d = np.where(frozen, 0.0, d)
            dphi0 = float(d @ g)
            if dphi0 >= 0.0 or not d.any():
                termination = "line-search-failure"
                break

        def phi(t):
            raw = x + t * d
            z = project(raw)
            fv, gv = ev(z)
            live = (raw >= lo) & (raw <= hi)
            return fv, float(gv @ np.where(live, d, 0.0)), z, gv

        if exact_step is not None:
            t = float(exact_step(x, d))
            fn, _, xn, gn = phi(t)
            accepted = True
        else:
            t_init = 1.0 if mem else min(1.0, 1.0 / max(float(np.abs(g).sum()), 1e-12))
            found = _wolfe_search(phi, f, dphi0, t_init, cfg)
            if found is None:
                termination = "line-search-failure"
                break
            t, fn, xn, gn = found
            accepted = True

        if accepted:
            s = xn - x
            y = gn - g
            sy = float(s @ y)
            if sy > _CURVATURE_MIN:
                mem.append((s, y, 1.0 / sy))
                if len(mem) > cfg.memory:
                    mem.pop(0)
            else:
                skips += 1
            records.append(IterateRecord(tuple(xn), fn, float(np.linalg.norm(gn))))
            step_size = float(np.abs(s).max())
            x, f, g = xn, fn, gn
            if step_size <= cfg.step_tol:
                termination = "step"
                break

    trace = SolveTrace(iterates=tuple(records), termination=termination,
                       best_loss=best_f, curvature_skips=skips)
    return best_x, trace


def _wolfe_search(phi, f0, dphi0, t_init, cfg: SolverConfig):
    """Strong-Wolfe bracketing search; None when no acceptable step exists."""
    t_prev, f_prev, d_prev = 0.0, f0, dphi0
    t = t_init
    for i in range(cfg.max_line_search):
        fv, dv, z, gv = phi(t)
        if fv > f0 + cfg.c1 * t * dphi0 or (i > 0 and fv >= f_prev):
            return _zoom(phi, f0, dphi0, t_prev, f_prev, d_prev, t, fv, cfg)
        if abs(dv) <= -cfg.c2 * dphi0:
            return t, fv, z, gv
        if dv >= 0.0:
            return _zoom(phi, f0, dphi0, t, fv, dv, t_prev, f_prev, cfg)
        t_prev, f_prev, d_prev = t, fv, dv
        t *= 2.0
    return None


def _zoom(phi, f0, dphi0, tlo, flo, dlo, thi, fhi, cfg: SolverConfig):
    """Refine a bracketing interval until strong Wolfe holds."""
    for _ in range(cfg.max_line_search):
        t = _interp_quadratic(tlo, flo, dlo, thi, fhi)
        fv, dv, z, gv = phi(t)
        if fv > f0 + cfg.c1 * t * dphi0 or fv >= flo:
            thi, fhi = t, fv
        else:
            if abs(dv) <= -cfg.c2 * dphi0:
                return t, fv, z, gv
            if dv * (thi - tlo) >= 0.0:
                thi, fhi = tlo, flo
            tlo, flo, dlo = t, fv, dv
        if abs(thi - tlo) <= 1e-16 * max(1.0, abs(tlo)):
            return None
    return None
