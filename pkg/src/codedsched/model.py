"""Problem containers and the shifted-exponential work model.

Units are fixed package-wide: times in milliseconds, rates in 1/ms, work in
coded rows. Loads are real-valued (continuous relaxation of row counts).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# exp() underflows to 0 near -745; clamping the argument keeps gradients finite
# without changing any value that matters at double precision.
EXP_ARG_FLOOR = -700.0


def _frozen_array(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


def clamped_exp(arg):
    """exp() with the argument floored at EXP_ARG_FLOOR."""
    return np.exp(np.maximum(arg, EXP_ARG_FLOOR))


class AssignMode(Enum):
    DEDICATED = "dedicated"
    PROBABILISTIC = "probabilistic"


@dataclass(frozen=True)
class ProblemInstance:
    """One multi-master scheduling problem over shared workers.

    straggle_rate[m, n] (1/ms) and shift_per_row[m, n] (ms per row) set the
    shifted-exponential completion time of worker n running rows for master m:
    a load of l rows finishes by time x with probability
    1 - exp(-(rate/l) * (x - shift*l)) for x >= shift*l.

    required_rows[m] is how many coded rows master m must collect to decode.
    task_cols[m] is the width of master m's input vector; metadata only.
    """

    num_masters: int
    num_workers: int
    straggle_rate: np.ndarray
    shift_per_row: np.ndarray
    required_rows: np.ndarray
    task_cols: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        m, n = int(self.num_masters), int(self.num_workers)
        if m < 1:
            raise ValueError("need at least one master")
        if n <= m:
            raise ValueError(f"need more workers than masters (N={n}, M={m})")
        object.__setattr__(self, "num_masters", m)
        object.__setattr__(self, "num_workers", n)
        rate = _frozen_array(self.straggle_rate)
        shift = _frozen_array(self.shift_per_row)
        rows = _frozen_array(self.required_rows, dtype=np.int64)
        cols = _frozen_array(self.task_cols, dtype=np.int64)
        if rate.shape != (m, n) or shift.shape != (m, n):
            raise ValueError("rate/shift matrices must have shape (M, N)")
        if rows.shape != (m,) or cols.shape != (m,):
            raise ValueError("required_rows/task_cols must have shape (M,)")
        if not (np.isfinite(rate).all() and (rate > 0).all()):
            raise ValueError("straggle rates must be finite and positive")
        if not (np.isfinite(shift).all() and (shift > 0).all()):
            raise ValueError("per-row shifts must be finite and positive")
        if (rows < 1).any():
            raise ValueError("required_rows must be >= 1")
        if (cols < 1).any():
            raise ValueError("task_cols must be >= 1")
        object.__setattr__(self, "straggle_rate", rate)
        object.__setattr__(self, "shift_per_row", shift)
        object.__setattr__(self, "required_rows", rows)
        object.__setattr__(self, "task_cols", cols)


@dataclass(frozen=True)
class Assignment:
    """Which master each worker serves.

    probs[m, n] is the probability that worker n picks master m; column sums
    may be below 1, the remainder is the chance the worker stays idle.
    Dedicated mode restricts entries to exactly 0 or 1.
    """

    mode: AssignMode
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = _frozen_array(self.probs)
        if p.ndim != 2:
            raise ValueError("probs must be an (M, N) matrix")
        if not np.isfinite(p).all() or (p < 0).any() or (p > 1).any():
            raise ValueError("probabilities must lie in [0, 1]")
        col = p.sum(axis=0)
        if self.mode is AssignMode.DEDICATED:
            if not np.isin(p, (0.0, 1.0)).all():
                raise ValueError("dedicated assignments must be exactly 0/1")
            if (col > 1).any():
                raise ValueError("a worker cannot serve two masters")
        else:
            if (col > 1 + 1e-9).any():
                raise ValueError("per-worker probabilities must sum to <= 1")
        object.__setattr__(self, "probs", p)

    def workers_of(self, master: int) -> np.ndarray:
        """Indices of workers with positive probability for `master`."""
        return np.flatnonzero(self.probs[master] > 0)


@dataclass(frozen=True)
class LoadAllocation:
    """Coded rows handed to each (master, worker) pair; real-valued."""

    loads: np.ndarray

    def __post_init__(self) -> None:
        l = _frozen_array(self.loads)
        if l.ndim != 2:
            raise ValueError("loads must be an (M, N) matrix")
        if not np.isfinite(l).all() or (l < 0).any():
            raise ValueError("loads must be finite and >= 0")
        object.__setattr__(self, "loads", l)


@dataclass(frozen=True)
class Schedule:
    """An assignment plus loads and the model completion times.

    t_approx and per_master_t are model values except when t_empirical is
    set, in which case they hold simulated means (the uncoded baseline has no
    model completion time). `uncoded` switches the recovery rule: no coding
    redundancy, so a master must wait for every one of its workers.
    """

    assignment: Assignment
    loads: LoadAllocation
    t_approx: float
    per_master_t: np.ndarray
    uncoded: bool = False
    t_empirical: bool = False

    def __post_init__(self) -> None:
        per_t = _frozen_array(self.per_master_t)
        if per_t.ndim != 1 or per_t.shape[0] != self.loads.loads.shape[0]:
            raise ValueError("per_master_t must have one entry per master")
        object.__setattr__(self, "per_master_t", per_t)
        object.__setattr__(self, "t_approx", float(self.t_approx))
        if (self.loads.loads[self.assignment.probs == 0] > 0).any():
            raise ValueError("load placed on a pair with zero probability")
        if not np.isnan(self.t_approx):
            top = float(np.max(per_t))
            if abs(self.t_approx - top) > 1e-9 * max(1.0, abs(top)):
                raise ValueError("t_approx must equal the slowest master's t")


def check_schedule(instance: ProblemInstance, schedule: Schedule) -> None:
    """Cross-checks that need the instance; raises ValueError on violation.

    Dedicated schedules must give every master enough rows in total, and any
    non-empirical t_approx must sit above every loaded pair's shift floor.
    """
    l = schedule.loads.loads
    if l.shape != (instance.num_masters, instance.num_workers):
        raise ValueError("load matrix shape does not match the instance")
    if schedule.assignment.mode is AssignMode.DEDICATED and not schedule.uncoded:
        total = l.sum(axis=1)
        need = instance.required_rows.astype(float)
        if (total < need * (1 - 1e-9)).any():
            raise ValueError("a master cannot recover: total load below required rows")
    if not np.isnan(schedule.t_approx):
        floor = instance.shift_per_row * l
        if (floor > schedule.t_approx * (1 + 1e-9)).any():
            raise ValueError("t_approx below some loaded pair's shift floor")


def expected_rows(load, prob, rate, shift, t):
    """Expected rows a (master, worker) pair returns by time t.

    prob * load * (1 - exp(-(rate/load) * (t - shift*load))) when the pair is
    loaded and t has passed the shift floor; 0 otherwise. Broadcasts over
    numpy arrays; scalars in, scalar out.
    """
    load = np.asarray(load, dtype=float)
    prob = np.asarray(prob, dtype=float)
    rate = np.asarray(rate, dtype=float)
    shift = np.asarray(shift, dtype=float)
    t = np.asarray(t, dtype=float)
    if (load < 0).any():
        raise ValueError("load must be >= 0")
    if (prob < 0).any() or (prob > 1).any():
        raise ValueError("prob must lie in [0, 1]")
    if (rate <= 0).any() or (shift <= 0).any():
        raise ValueError("rate and shift must be positive")
    if (t < 0).any():
        raise ValueError("t must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        decay = clamped_exp(-(rate / load) * (t - shift * load))
        val = prob * load * (1.0 - decay)
    active = (load > 0) & (t >= shift * load)
    out = np.where(active, val, 0.0)
    return float(out) if out.ndim == 0 else out


def expected_rows_master(
    instance: ProblemInstance,
    assignment: Assignment,
    loads: LoadAllocation,
    master: int,
    t: float,
) -> float:
    """Expected rows master `master` has collected by time t, summed over workers."""
    vals = expected_rows(
        loads.loads[master],
        assignment.probs[master],
        instance.straggle_rate[master],
        instance.shift_per_row[master],
        t,
    )
    return float(np.sum(vals))


def sample_completion_time(load, rate, shift, unit_uniform):
    """Draw the finish time of `load` rows by inverting the delay CDF.

    t = shift*load - (load/rate) * ln(U) for U in (0, 1); always >= shift*load.
    """
    load = np.asarray(load, dtype=float)
    u01 = np.asarray(unit_uniform, dtype=float)
    if (load <= 0).any():
        raise ValueError("load must be positive to sample a completion time")
    if (u01 <= 0).any() or (u01 >= 1).any():
        raise ValueError("unit_uniform must lie strictly inside (0, 1)")
    out = shift * load - (load / np.asarray(rate, dtype=float)) * np.log(u01)
    return float(out) if np.ndim(out) == 0 else out


def expected_rows_hessian(load: float, t: float, rate: float, shift: float) -> np.ndarray:
    """Hessian of -expected_rows (at prob=1) with respect to (load, t).

    Valid where load > 0 and t >= shift*load. Rank one and positive
    semidefinite: eigenvalues are 0 and
    exp(-(rate/load)(t - shift*load)) * rate^2 (load^2 + t^2) / load^3.
    """
    if load <= 0:
        raise ValueError("load must be positive")
    if t < shift * load:
        raise ValueError("Hessian only defined past the shift floor t >= shift*load")
    decay = float(clamped_exp(-(rate / load) * (t - shift * load)))
    r2 = rate * rate
    return decay * np.array(
        [
            [r2 * t * t / load**3, -r2 * t / load**2],
            [-r2 * t / load**2, r2 / load],
        ]
    )
