import math

import numpy as np
import pytest

from codedsched.allocation import (
    compute_phi,
    master_rate,
    optimal_loads_for_master,
    pair_values,
    round_loads,
    verify_kkt,
)
from codedsched.model import AssignMode, Assignment, ProblemInstance, expected_rows

from conftest import random_instance


def _single_worker_instance(rate: float, shift: float, rows: int) -> ProblemInstance:
    u = np.array([[rate, rate]])
    a = np.array([[shift, shift]])
    return ProblemInstance(1, 2, u, a, np.array([rows]), np.array([1]))


class TestPhi:
    def test_unit_rate_unit_shift(self) -> None:
        assert math.isclose(compute_phi(1.0, 1.0), 2.1461932206205825, rel_tol=1e-14)

    def test_defining_identity(self) -> None:
        rng = np.random.default_rng(7)
        for _ in range(200):
            rate = float(rng.uniform(0.05, 10.0))
            shift = float(rng.uniform(0.05, 10.0))
            phi = compute_phi(rate, shift)
            assert phi > shift
            residual = (1.0 + rate * phi) * math.exp(-rate * (phi - shift)) - 1.0
            assert abs(residual) <= 1e-12

    def test_validation(self) -> None:
        with pytest.raises(ValueError):
            compute_phi(0.0, 1.0)
        with pytest.raises(ValueError):
            compute_phi(1.0, -1.0)


class TestSingleWorkerClosedForm:
    def test_oracle_values(self) -> None:
        inst = _single_worker_instance(1.0, 1.0, 1000)
        loads, t = optimal_loads_for_master(inst, 0, [0])
        assert math.isclose(t, 3146.1932206205825, rel_tol=1e-13)
        assert math.isclose(loads[0], 1465.941272384993, rel_tol=1e-13)

    def test_lone_worker_value_is_reciprocal_time(self) -> None:
        inst = _single_worker_instance(1.0, 1.0, 1000)
        pairs = pair_values(inst)
        assert math.isclose(pairs.value[0, 0], 3.178444328993727e-4, rel_tol=1e-13)
        _, t = optimal_loads_for_master(inst, 0, [0], pairs)
        assert math.isclose(pairs.value[0, 0], 1.0 / t, rel_tol=1e-13)


class TestOptimalLoads:
    def test_properties_across_random_draws(self) -> None:
        rng = np.random.default_rng(11)
        for _ in range(50):
            num_n = int(rng.integers(1, 9))
            inst = ProblemInstance(
                1,
                max(num_n + 1, 2),
                rng.uniform(0.5, 5.0, (1, max(num_n + 1, 2))),
                rng.uniform(0.2, 2.0, (1, max(num_n + 1, 2))),
                np.array([int(rng.integers(1_000, 1_000_000))]),
                np.array([1]),
            )
            workers = np.arange(num_n)
            loads, t = optimal_loads_for_master(inst, 0, workers)
            assert (loads > 0).all()
            # t / load recovers each pair's phi
            for j, n in enumerate(workers):
                phi = compute_phi(
                    float(inst.straggle_rate[0, n]), float(inst.shift_per_row[0, n])
                )
                assert math.isclose(t / loads[j], phi, rel_tol=1e-12)
            collected = sum(
                expected_rows(
                    loads[j],
                    1.0,
                    inst.straggle_rate[0, n],
                    inst.shift_per_row[0, n],
                    t,
                )
                for j, n in enumerate(workers)
            )
            assert abs(collected - inst.required_rows[0]) <= 1e-9 * inst.required_rows[0]

    def test_kkt_residuals_at_optimum(self) -> None:
        inst = random_instance(3, num_masters=2, num_workers=8, required_rows=50_000)
        workers = [0, 2, 5, 7]
        loads, t = optimal_loads_for_master(inst, 1, workers)
        report = verify_kkt(inst, 1, workers, loads, t)
        assert report.stationarity_residual_l <= 1e-9
        assert report.complementarity_residual <= 1e-6 * inst.required_rows[1]
        assert report.multiplier > 0

    def test_kkt_rejects_suboptimal_point(self) -> None:
        inst = random_instance(3, num_masters=2, num_workers=8, required_rows=50_000)
        workers = [0, 2, 5, 7]
        loads, t = optimal_loads_for_master(inst, 1, workers)
        skew = loads * np.array([1.5, 0.9, 0.9, 0.9])
        report = verify_kkt(inst, 1, workers, skew, t)
        assert report.stationarity_residual_l > 1e-4

    def test_worker_validation(self) -> None:
        inst = random_instance(0, num_masters=2, num_workers=6)
        with pytest.raises(ValueError):
            optimal_loads_for_master(inst, 0, [])
        with pytest.raises(ValueError):
            optimal_loads_for_master(inst, 0, [0, 0])
        with pytest.raises(ValueError):
            optimal_loads_for_master(inst, 0, [99])


class TestPairTable:
    def test_matches_scalar_phi(self) -> None:
        inst = random_instance(4, num_masters=2, num_workers=5)
        pairs = pair_values(inst)
        for m in range(2):
            for n in range(5):
                phi = compute_phi(
                    float(inst.straggle_rate[m, n]), float(inst.shift_per_row[m, n])
                )
                assert math.isclose(pairs.phi[m, n], phi, rel_tol=1e-13)

    def test_master_rate_weights_by_probability(self) -> None:
        inst = random_instance(4, num_masters=2, num_workers=5)
        pairs = pair_values(inst)
        probs = np.zeros((2, 5))
        probs[0, :3] = 1.0
        probs[1, 3:] = 1.0
        assign = Assignment(AssignMode.DEDICATED, probs)
        assert master_rate(pairs, assign, 0) == pytest.approx(
            pairs.value[0, :3].sum(), rel=1e-15
        )


class TestRoundLoads:
    def test_rounding_keeps_coverage(self) -> None:
        inst = _single_worker_instance(1.0, 1.0, 1000)
        pairs = pair_values(inst)
        loads, _ = optimal_loads_for_master(inst, 0, [0, 1], pairs)
        rounded = round_loads(loads, 1000, pairs.phi[0, [0, 1]])
        assert rounded.dtype.kind == "i"
        assert rounded.sum() >= 1000
        assert np.abs(rounded - loads).max() <= 0.5

    def test_deficit_lands_on_largest_phi(self) -> None:
        rounded = round_loads([0.2, 0.4, 0.2], 3, [1.0, 2.5, 2.0])
        assert rounded.sum() >= 3
        assert rounded[1] == 3
