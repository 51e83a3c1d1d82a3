import math

import numpy as np
import pytest

from codedsched.model import (
    AssignMode,
    Assignment,
    LoadAllocation,
    ProblemInstance,
    Schedule,
    check_schedule,
    expected_rows,
    expected_rows_hessian,
    expected_rows_master,
    sample_completion_time,
)


def _instance(u: np.ndarray, rows) -> ProblemInstance:
    return ProblemInstance(
        num_masters=u.shape[0],
        num_workers=u.shape[1],
        straggle_rate=u,
        shift_per_row=1.0 / u,
        required_rows=np.asarray(rows),
        task_cols=np.ones(u.shape[0], dtype=np.int64),
    )


class TestProblemInstance:
    def test_validation(self) -> None:
        u = np.ones((2, 4))
        with pytest.raises(ValueError):
            _instance(np.zeros((2, 4)), [10, 10])  # nonpositive rate
        with pytest.raises(ValueError):
            ProblemInstance(2, 2, u[:, :2], u[:, :2], np.array([1, 1]), np.array([1, 1]))
        with pytest.raises(ValueError):
            ProblemInstance(0, 4, u[:0], u[:0], np.array([]), np.array([]))
        with pytest.raises(ValueError):
            _instance(u, [10, 0])  # rows below one

    def test_arrays_frozen(self) -> None:
        inst = _instance(np.ones((2, 4)), [10, 10])
        with pytest.raises(ValueError):
            inst.straggle_rate[0, 0] = 2.0


class TestAssignment:
    def test_dedicated_requires_binary(self) -> None:
        with pytest.raises(ValueError):
            Assignment(AssignMode.DEDICATED, np.array([[0.5, 1.0], [0.5, 0.0]]))
        with pytest.raises(ValueError):
            Assignment(AssignMode.DEDICATED, np.array([[1.0, 1.0], [1.0, 0.0]]))

    def test_probabilistic_column_mass(self) -> None:
        ok = Assignment(AssignMode.PROBABILISTIC, np.array([[0.6, 0.3], [0.4, 0.2]]))
        assert list(ok.workers_of(0)) == [0, 1]
        with pytest.raises(ValueError):
            Assignment(AssignMode.PROBABILISTIC, np.array([[0.8, 0.0], [0.3, 0.0]]))


class TestSchedule:
    def test_t_must_match_slowest_master(self) -> None:
        assign = Assignment(AssignMode.DEDICATED, np.array([[1.0, 0.0], [0.0, 1.0]]))
        loads = LoadAllocation(np.array([[5.0, 0.0], [0.0, 7.0]]))
        with pytest.raises(ValueError):
            Schedule(assign, loads, t_approx=9.0, per_master_t=np.array([10.0, 8.0]))
        sched = Schedule(assign, loads, t_approx=10.0, per_master_t=np.array([10.0, 8.0]))
        assert sched.t_approx == 10.0

    def test_load_needs_probability(self) -> None:
        assign = Assignment(AssignMode.DEDICATED, np.array([[1.0, 0.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            Schedule(
                assign,
                LoadAllocation(np.array([[5.0, 1.0], [0.0, 7.0]])),
                t_approx=float("nan"),
                per_master_t=np.array([float("nan")] * 2),
            )

    def test_check_schedule_capacity_and_floor(self) -> None:
        inst = _instance(np.ones((2, 3)), [10, 10])
        assign = Assignment(
            AssignMode.DEDICATED, np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
        )
        short = Schedule(
            assign,
            LoadAllocation(np.array([[4.0, 0.0, 0.0], [0.0, 8.0, 8.0]])),
            t_approx=float("nan"),
            per_master_t=np.full(2, np.nan),
        )
        with pytest.raises(ValueError):
            check_schedule(inst, short)  # master 0 can never gather 10 rows
        floored = Schedule(
            assign,
            LoadAllocation(np.array([[40.0, 0.0, 0.0], [0.0, 30.0, 30.0]])),
            t_approx=20.0,
            per_master_t=np.array([20.0, 19.0]),
        )
        with pytest.raises(ValueError):
            check_schedule(inst, floored)  # t below the 40-row shift floor


class TestExpectedRows:
    def test_hand_value(self) -> None:
        # one mean past the shift floor: l * (1 - e^{-1})
        got = expected_rows(100.0, 1.0, 1.0, 1.0, 200.0)
        assert math.isclose(got, 63.212055882855765, rel_tol=1e-15)
        assert expected_rows(100.0, 0.5, 1.0, 1.0, 200.0) == pytest.approx(got / 2)

    def test_zero_below_shift_floor(self) -> None:
        assert expected_rows(100.0, 1.0, 1.0, 1.0, 99.9) == 0.0
        assert expected_rows(100.0, 1.0, 1.0, 1.0, 100.0) == 0.0
        assert expected_rows(0.0, 1.0, 1.0, 1.0, 50.0) == 0.0

    def test_monotone_in_t(self) -> None:
        ts = np.linspace(100.0, 2000.0, 50)
        vals = expected_rows(100.0, 1.0, 1.3, 1.0 / 1.3, ts)
        assert (np.diff(vals) >= 0).all()
        assert vals[-1] < 100.0

    def test_validation(self) -> None:
        with pytest.raises(ValueError):
            expected_rows(-1.0, 1.0, 1.0, 1.0, 10.0)
        with pytest.raises(ValueError):
            expected_rows(1.0, 1.5, 1.0, 1.0, 10.0)
        with pytest.raises(ValueError):
            expected_rows(1.0, 1.0, 0.0, 1.0, 10.0)

    def test_master_sum(self, tiny_instance) -> None:
        assign = Assignment(
            AssignMode.PROBABILISTIC,
            np.array([[0.5, 1.0, 0.0, 0.3], [0.5, 0.0, 1.0, 0.7]]),
        )
        loads = LoadAllocation(np.full((2, 4), 200.0))
        t = 900.0
        total = expected_rows_master(tiny_instance, assign, loads, 0, t)
        by_hand = sum(
            expected_rows(
                200.0,
                assign.probs[0, n],
                tiny_instance.straggle_rate[0, n],
                tiny_instance.shift_per_row[0, n],
                t,
            )
            for n in range(4)
        )
        assert total == pytest.approx(by_hand, rel=1e-15)


class TestSampling:
    def test_inverse_cdf_value(self) -> None:
        t = sample_completion_time(100.0, 1.0, 1.0, math.exp(-1.0))
        assert math.isclose(t, 200.0, rel_tol=1e-12)

    def test_never_below_shift_floor(self) -> None:
        rng = np.random.default_rng(0)
        u = rng.random(1000) * 0.999 + 5e-4
        times = sample_completion_time(50.0, 2.0, 0.5, u)
        assert (times >= 25.0).all()

    def test_validation(self) -> None:
        with pytest.raises(ValueError):
            sample_completion_time(0.0, 1.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            sample_completion_time(10.0, 1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            sample_completion_time(10.0, 1.0, 1.0, 1.0)


class TestHessian:
    def test_matches_finite_differences(self) -> None:
        load, t, rate, shift = 120.0, 300.0, 1.4, 0.7

        def f(l: float, tt: float) -> float:
            return -expected_rows(l, 1.0, rate, shift, tt)

        h = 1e-4
        fd = np.empty((2, 2))
        fd[0, 0] = (f(load + h, t) - 2 * f(load, t) + f(load - h, t)) / h**2
        fd[1, 1] = (f(load, t + h) - 2 * f(load, t) + f(load, t - h)) / h**2
        fd[0, 1] = fd[1, 0] = (
            f(load + h, t + h) - f(load + h, t - h) - f(load - h, t + h) + f(load - h, t - h)
        ) / (4 * h**2)
        analytic = expected_rows_hessian(load, t, rate, shift)
        assert np.linalg.norm(fd - analytic) <= 1e-5 * np.linalg.norm(analytic)

    def test_rank_one_psd(self) -> None:
        h = expected_rows_hessian(80.0, 500.0, 2.0, 0.5)
        eig = np.linalg.eigvalsh(h)
        assert eig[0] >= -1e-12 * eig[1]
        assert eig[1] > 0

    def test_domain(self) -> None:
        with pytest.raises(ValueError):
            expected_rows_hessian(10.0, 5.0, 1.0, 1.0)  # below the floor
        with pytest.raises(ValueError):
            expected_rows_hessian(0.0, 5.0, 1.0, 1.0)
