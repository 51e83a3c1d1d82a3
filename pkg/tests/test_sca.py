import math

import numpy as np
import pytest

from codedsched.allocation import optimal_loads_for_master
from codedsched.dedicated import iterated_greedy
from codedsched.model import ProblemInstance, check_schedule
from codedsched.sca import (
    ScaConfig,
    ScaPoint,
    dc_parts,
    exact_deficits,
    initial_point_from_dedicated,
    majorized_constraint,
    sca_solve,
)

from conftest import random_instance


def _random_point(rng: np.random.Generator, shape: tuple[int, int], t_lo: float, t_hi: float) -> ScaPoint:
    return ScaPoint(
        l=rng.uniform(50.0, 4000.0, shape),
        k=rng.uniform(0.0, 1.0, shape),
        t=float(rng.uniform(t_lo, t_hi)),
    )


class TestDcParts:
    def test_zero_product_and_t_zero(self) -> None:
        z = dc_parts(np.array(0.0), np.array(1e-6), np.array(1.0), np.array(1.0))
        assert z.g_plus - z.g_minus == pytest.approx(0.0, abs=1e-12)
        z = dc_parts(np.array(1.0), np.array(2.0), np.array(0.0), np.array(3.0))
        # at t = 0 the exponential is 1, so the h difference is the plain product
        assert z.h_plus - z.h_minus == pytest.approx(2.0, rel=1e-15)

    def test_difference_reconstructs_both_functions(self) -> None:
        rng = np.random.default_rng(0)
        k = rng.uniform(0.0, 1.0, 50)
        l = rng.uniform(1.0, 1000.0, 50)
        t = rng.uniform(0.0, 5000.0, 50)
        u = rng.uniform(0.5, 5.0, 50)
        z = dc_parts(k, l, t, u)
        assert np.allclose(z.g_plus - z.g_minus, -k * l, rtol=1e-12, atol=1e-9)
        assert np.allclose(
            z.h_plus - z.h_minus, k * l * np.exp(-u * t / l), rtol=1e-12, atol=1e-9
        )

    def test_minus_gradients_match_finite_differences(self) -> None:
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(100):
            k = float(rng.uniform(0.05, 1.0))
            l = float(rng.uniform(0.5, 50.0))
            t = float(rng.uniform(0.1, 50.0))
            u = float(rng.uniform(0.5, 5.0))

            def g_minus(kk: float, ll: float, tt: float) -> float:
                return float(dc_parts(np.array(kk), np.array(ll), np.array(tt), np.array(u)).g_minus)

            def h_minus(kk: float, ll: float, tt: float) -> float:
                return float(dc_parts(np.array(kk), np.array(ll), np.array(tt), np.array(u)).h_minus)

            z = dc_parts(np.array(k), np.array(l), np.array(t), np.array(u))
            checks = [
                (z.grad_g_minus_k, (g_minus(k + h, l, t) - g_minus(k - h, l, t)) / (2 * h)),
                (z.grad_g_minus_l, (g_minus(k, l + h, t) - g_minus(k, l - h, t)) / (2 * h)),
                (z.grad_g_minus_t, (g_minus(k, l, t + h) - g_minus(k, l, t - h)) / (2 * h)),
                (z.grad_h_minus_k, (h_minus(k + h, l, t) - h_minus(k - h, l, t)) / (2 * h)),
                (z.grad_h_minus_l, (h_minus(k, l + h, t) - h_minus(k, l - h, t)) / (2 * h)),
                (z.grad_h_minus_t, (h_minus(k, l, t + h) - h_minus(k, l, t - h)) / (2 * h)),
            ]
            for analytic, numeric in checks:
                scale = max(1.0, abs(float(analytic)))
                assert abs(float(analytic) - numeric) <= 1e-5 * scale

    def test_domain(self) -> None:
        with pytest.raises(ValueError):
            dc_parts(np.array(0.5), np.array(0.0), np.array(1.0), np.array(1.0))
        with pytest.raises(ValueError):
            dc_parts(np.array(0.5), np.array(1.0), np.array(-1.0), np.array(1.0))


class TestMajorization:
    def _instance(self) -> ProblemInstance:
        return random_instance(6, num_masters=2, num_workers=5, required_rows=2000)

    def test_tight_at_expansion(self) -> None:
        inst = self._instance()
        rng = np.random.default_rng(2)
        for _ in range(20):
            z = _random_point(rng, (2, 5), 3000.0, 9000.0)
            for m in range(2):
                tilde = majorized_constraint(m, z, z, inst)
                exact = float(exact_deficits(inst, z.l, z.k, z.t)[m])
                assert abs(tilde - exact) <= 1e-9 * max(1.0, abs(exact))

    def test_upper_bounds_exact_deficit(self) -> None:
        inst = self._instance()
        rng = np.random.default_rng(3)
        for _ in range(1000):
            w = _random_point(rng, (2, 5), 100.0, 9000.0)
            z = _random_point(rng, (2, 5), 100.0, 9000.0)
            m = int(rng.integers(0, 2))
            tilde = majorized_constraint(m, w, z, inst)
            exact = float(exact_deficits(inst, w.l, w.k, w.t)[m])
            assert tilde >= exact - 1e-9

    def test_zero_probability_gives_bare_demand(self) -> None:
        inst = self._instance()
        z = ScaPoint(l=np.full((2, 5), 100.0), k=np.zeros((2, 5)), t=4000.0)
        for m in range(2):
            assert majorized_constraint(m, z, z, inst) == pytest.approx(
                float(inst.required_rows[m]), rel=1e-12
            )

    def test_convex_in_the_trial_point(self) -> None:
        inst = self._instance()
        rng = np.random.default_rng(4)
        z = _random_point(rng, (2, 5), 3000.0, 6000.0)
        for _ in range(200):
            w1 = _random_point(rng, (2, 5), 100.0, 9000.0)
            w2 = _random_point(rng, (2, 5), 100.0, 9000.0)
            lam = float(rng.uniform(0.0, 1.0))
            mid = ScaPoint(
                l=lam * w1.l + (1 - lam) * w2.l,
                k=lam * w1.k + (1 - lam) * w2.k,
                t=lam * w1.t + (1 - lam) * w2.t,
            )
            for m in range(2):
                left = majorized_constraint(m, mid, z, inst)
                right = lam * majorized_constraint(m, w1, z, inst) + (
                    1 - lam
                ) * majorized_constraint(m, w2, z, inst)
                assert left <= right + 1e-9


class TestScaSolve:
    def test_single_master_matches_closed_form(self) -> None:
        inst = random_instance(0, num_masters=1, num_workers=4, required_rows=10_000)
        _, t_star = optimal_loads_for_master(inst, 0, np.arange(4))
        sched, trace = sca_solve(inst)
        assert trace.converged
        assert abs(sched.t_approx - t_star) <= 1e-3 * t_star
        # splitting the only master's workers cannot help: full dedication
        assert (sched.assignment.probs >= 0.999).all()

    def test_trace_monotone_and_feasible(self) -> None:
        inst = random_instance(1, num_masters=2, num_workers=8, required_rows=20_000)
        sched, trace = sca_solve(inst)
        tv = trace.t_values
        assert len(tv) == trace.iterations + 1
        slack = 1e-9 * np.maximum(1.0, np.abs(tv[:-1]))
        assert (np.diff(tv) <= slack).all()
        assert (trace.max_deficits <= 1e-7).all()
        check_schedule(inst, sched)

    def test_never_above_best_dedicated(self) -> None:
        for seed in range(20):
            num_m = 2 + seed % 2
            num_n = (6, 8, 10)[seed % 3] + (seed % 2)
            inst = random_instance(
                seed, num_masters=num_m, num_workers=num_n, required_rows=10_000
            )
            sched, trace = sca_solve(inst)
            dedicated = iterated_greedy(inst)
            assert sched.t_approx <= dedicated.t_approx + 1e-6
            slack = 1e-9 * np.maximum(1.0, np.abs(trace.t_values[:-1]))
            assert (np.diff(trace.t_values) <= slack).all()
            assert (trace.max_deficits <= 1e-7).all()

    def test_initial_point_strictly_feasible(self) -> None:
        inst = random_instance(2, num_masters=3, num_workers=9, required_rows=5000)
        point = initial_point_from_dedicated(inst, ScaConfig())
        assert (exact_deficits(inst, point.l, point.k, point.t) < 0).all()
        assert (point.k > 0).all() and (point.k < 1).all()
        assert (point.l > 0).all()

    def test_explicit_initial_point_is_validated(self) -> None:
        inst = random_instance(2, num_masters=2, num_workers=6, required_rows=5000)
        bad = ScaPoint(l=np.full((2, 6), 10.0), k=np.full((2, 6), 0.4), t=5.0)
        with pytest.raises(ValueError):
            sca_solve(inst, initial=bad)

    def test_config_validation(self) -> None:
        with pytest.raises(ValueError):
            ScaConfig(alpha=0.0)
        with pytest.raises(ValueError):
            ScaConfig(gamma0=1.5)
        with pytest.raises(ValueError):
            ScaConfig(convergence_tol=-1.0)

    def test_step_size_recursion_decreasing(self) -> None:
        gamma, alpha = 1.0, 1e-3
        previous = gamma
        for _ in range(5000):
            gamma = gamma * (1.0 - alpha * gamma)
            assert 0.0 < gamma < previous
            previous = gamma
