from __future__ import annotations

import numpy as np
import pytest

from cropopt import NumericError, SolverConfig, lbfgs_minimize


def quadratic(center, scales):
    center = np.asarray(center, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)

    def fun(x):
        d = x - center
        return float(0.5 * (scales * d * d).sum()), scales * d

    return fun


def rosenbrock(x):
    a, b = 1.0, 100.0
    f = (a - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2
    g = np.array([
        -2 * (a - x[0]) - 4 * b * x[0] * (x[1] - x[0] ** 2),
        2 * b * (x[1] - x[0] ** 2),
    ])
    return float(f), g


class TestUnconstrained:
    def test_quadratic_converges_fast(self):
        # Condition number 8: the inexact Wolfe search needs a handful of
        # corrections, but convergence should still be quick and tight.
        fun = quadratic([1.0, -2.0, 3.0], [1.0, 4.0, 0.5])
        best, trace = lbfgs_minimize(fun, np.zeros(3))
        np.testing.assert_allclose(best, [1.0, -2.0, 3.0], atol=1e-6)
        assert trace.termination == "gradient"
        assert len(trace.iterates) <= 15

    def test_rosenbrock_from_classic_start(self):
        cfg = SolverConfig(max_iters=200)
        best, trace = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]),
                                     config=cfg)
        np.testing.assert_allclose(best, [1.0, 1.0], atol=1e-6)
        assert trace.termination == "gradient"

    def test_accepted_losses_never_increase(self):
        cfg = SolverConfig(max_iters=100)
        _, trace = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), config=cfg)
        losses = [it.loss for it in trace.iterates]
        assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))

    def test_best_loss_is_minimum_returned(self):
        fun = quadratic([0.5], [2.0])
        best, trace = lbfgs_minimize(fun, np.array([3.0]))
        assert trace.best_loss == pytest.approx(fun(best)[0], abs=1e-15)

    def test_deterministic(self):
        cfg = SolverConfig(max_iters=60)
        b1, t1 = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), config=cfg)
        b2, t2 = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), config=cfg)
        assert np.array_equal(b1, b2)
        assert t1 == t2

    def test_start_at_optimum_stops_immediately(self):
        fun = quadratic([1.0, 1.0], [1.0, 1.0])
        best, trace = lbfgs_minimize(fun, np.array([1.0, 1.0]))
        assert trace.termination == "gradient"
        assert len(trace.iterates) == 1
        assert np.array_equal(best, [1.0, 1.0])

    def test_max_iters_termination(self):
        cfg = SolverConfig(max_iters=3)
        _, trace = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), config=cfg)
        assert trace.termination == "max-iters"


class TestBounds:
    def test_active_bound_optimum(self):
        # Unconstrained minimum at x = 2 sits outside the box [-1, 1]; the
        # solver should stop at the bound with a zero projected gradient.
        fun = quadratic([2.0], [1.0])
        best, trace = lbfgs_minimize(fun, np.array([0.0]),
                                     bounds=(np.array([-1.0]), np.array([1.0])))
        assert best[0] == pytest.approx(1.0, abs=1e-9)
        assert trace.termination == "gradient"

    def test_interior_optimum_matches_unconstrained(self):
        fun = quadratic([0.25, -0.3], [1.0, 2.0])
        bounds = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        best, _ = lbfgs_minimize(fun, np.array([0.9, 0.9]), bounds=bounds)
        np.testing.assert_allclose(best, [0.25, -0.3], atol=1e-7)

    def test_iterates_stay_inside_box(self):
        fun = quadratic([5.0, 5.0], [1.0, 1.0])
        lo, hi = np.array([-0.5, -0.5]), np.array([0.5, 0.5])
        best, trace = lbfgs_minimize(fun, np.array([0.0, 0.0]),
                                     bounds=(lo, hi))
        for it in trace.iterates:
            assert np.all(np.asarray(it.point) >= lo - 1e-12)
            assert np.all(np.asarray(it.point) <= hi + 1e-12)
        np.testing.assert_allclose(best, [0.5, 0.5], atol=1e-9)

    def test_degenerate_box_single_point(self):
        fun = quadratic([1.0], [1.0])
        best, trace = lbfgs_minimize(fun, np.array([0.2]),
                                     bounds=(np.array([0.2]), np.array([0.2])))
        assert best[0] == 0.2

    def test_start_outside_box_is_rejected(self):
        # Callers are responsible for clipping the start point first.
        fun = quadratic([0.0], [1.0])
        with pytest.raises(ValueError, match="outside the box"):
            lbfgs_minimize(fun, np.array([9.0]),
                           bounds=(np.array([-1.0]), np.array([1.0])))


class TestExactLineSearch:
    def test_quadratic_finite_termination(self):
        # L-BFGS with exact line searches on a strictly convex quadratic
        # reaches the minimizer in at most dim + 1 accepted iterates (it
        # behaves like conjugate gradients). The exact step along d is
        # -g.d / d.A.d.
        for seed in range(10):
            rng = np.random.default_rng(seed)
            dim = 3
            m = rng.standard_normal((dim, dim))
            a = m @ m.T + dim * np.eye(dim)
            center = rng.standard_normal(dim)

            def fun(x):
                d = x - center
                return float(0.5 * d @ a @ d), a @ d

            def exact_step(x, d):
                g = a @ (x - center)
                return float(-(g @ d) / (d @ a @ d))

            best, trace = lbfgs_minimize(fun, rng.standard_normal(dim),
                                         exact_step=exact_step)
            np.testing.assert_allclose(best, center, atol=1e-8)
            assert len(trace.iterates) <= dim + 1


class TestDiagnostics:
    def test_curvature_skips_observable(self):
        # A quartic plateau makes some (s, y) pairs nearly orthogonal, which
        # the curvature safeguard must reject rather than divide by ~0.
        def quartic(x):
            return float((x ** 4).sum()), 4.0 * x ** 3

        cfg = SolverConfig(max_iters=100, grad_tol=1e-12)
        _, trace = lbfgs_minimize(quartic, np.full(2, 0.1), config=cfg)
        assert trace.curvature_skips > 0

    def test_nan_objective_raises_numeric_error(self):
        def bad(x):
            if x[0] > 0.5:
                return float("nan"), np.zeros(1)
            return float(x[0] ** 2), 2 * x

        with pytest.raises(NumericError) as exc_info:
            lbfgs_minimize(bad, np.array([2.0]))
        assert exc_info.value.point is not None

    def test_line_search_failure_returns_best_seen(self):
        # Discontinuous step function: no Wolfe point exists along the ray,
        # so the search gives up; the solver must still return the best
        # point it evaluated rather than raising.
        def step_fun(x):
            return (0.0 if x[0] < 0 else 1.0) + 0.001 * float(x[0]), np.array([0.001])

        best, trace = lbfgs_minimize(step_fun, np.array([1.0]))
        assert trace.termination in ("line-search-failure", "gradient", "step")
        assert trace.best_loss <= step_fun(np.array([1.0]))[0]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(c1=0.9, c2=0.1)
        with pytest.raises(ValueError):
            SolverConfig(memory=0)
