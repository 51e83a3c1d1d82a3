"""Dedicated worker-to-master assignment: greedy heuristics, exact search,
and the uniform baselines.

An assignment maps each worker to exactly one master. Master m's completion
rate is V_m = sum of its workers' values (see allocation.PairTable); the
schedule finishes at max_m 1/V_m, so solvers maximize min_m V_m.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import PairTable, optimal_loads_for_master, pair_values
from .model import (
    AssignMode,
    Assignment,
    LoadAllocation,
    ProblemInstance,
    Schedule,
)

# Strictness slack for interchange comparisons: float-noise ties must not
# cycle, so a swap has to clear its guards by this margin.
_EPS = 1e-12
_MAX_LOCAL_PASSES = 100
_BRUTE_FORCE_CAP = 10**8


@dataclass(frozen=True)
class GreedyConfig:
    """Knobs for iterated_greedy.

    exploration_size defaults to floor(N/M), capped at N-1 so at least one
    worker survives each shake-up.
    """

    max_iterations: int = 100
    exploration_size: int | None = None
    rng_seed: int = 0
    no_improve_stop: int = 10

    def resolved_exploration_size(self, num_masters: int, num_workers: int) -> int:
        size = self.exploration_size
        if size is None:
            size = num_workers // num_masters
        size = min(size, num_workers - 1)
        if size < 1:
            raise ValueError("exploration_size must be at least 1")
        return size


@dataclass(frozen=True)
class AssignmentSolution:
    """A dedicated assignment with its loads and objective.

    objective = min_m V_m; t_approx = 1/objective; per_master_t[m] matches
    optimal_loads_for_master's t for master m's worker set.
    """

    assignment: Assignment
    loads: LoadAllocation
    objective: float
    t_approx: float
    per_master_t: np.ndarray
    per_master_rate: np.ndarray

    def schedule(self) -> Schedule:
        return Schedule(
            assignment=self.assignment,
            loads=self.loads,
            t_approx=self.t_approx,
            per_master_t=self.per_master_t,
        )


def _owner_rates(value: np.ndarray, owner: np.ndarray) -> np.ndarray:
    m = value.shape[0]
    rates = np.zeros(m)
    for i in range(m):
        rates[i] = value[i, owner == i].sum()
    return rates


def _assign_matrix(owner: np.ndarray, num_masters: int) -> np.ndarray:
    out = np.zeros((num_masters, owner.size))
    out[owner, np.arange(owner.size)] = 1.0
    return out


def _global_argmax(value: np.ndarray, row_ok: np.ndarray, col_ok: np.ndarray) -> tuple[int, int]:
    masked = np.where(row_ok[:, None] & col_ok[None, :], value, -np.inf)
    m, n = np.unravel_index(int(np.argmax(masked)), masked.shape)
    return int(m), int(n)


def _simple_owner(value: np.ndarray) -> np.ndarray:
    """One pass of greedy seeding plus min-rate filling.

    Seed: while some master is unserved, hand the best remaining (master,
    worker) pair to that master. Fill: the master with the lowest rate takes
    its best remaining worker. Ties break toward the lowest index.
    """
    num_m, num_n = value.shape
    owner = np.full(num_n, -1, dtype=int)
    unserved = np.ones(num_m, dtype=bool)
    free = np.ones(num_n, dtype=bool)
    while unserved.any():
        m, n = _global_argmax(value, unserved, free)
        owner[n] = m
        unserved[m] = False
        free[n] = False
    rates = _owner_rates(value, owner)
    while free.any():
        m = int(np.argmin(rates))
        n = int(np.argmax(np.where(free, value[m], -np.inf)))
        owner[n] = m
        rates[m] += value[m, n]
        free[n] = False
    return owner


def _local_search(value: np.ndarray, owner: np.ndarray, rates: np.ndarray) -> None:
    """Insertion and interchange passes until a full pass changes nothing.

    Insertion moves a worker to the lowest-rate other master when that
    strictly raises min_m V_m. Interchange swaps two workers across masters
    when the combined value strictly improves and both new rates stay above
    the pre-swap minimum. Both update owner/rates in place.
    """
    num_m, num_n = value.shape
    if num_m == 1:
        return
    for _ in range(_MAX_LOCAL_PASSES):
        changed = False
        for n in range(num_n):
            m1 = owner[n]
            others = rates.copy()
            others[m1] = np.inf
            m2 = int(np.argmin(others))
            cur_min = rates.min()
            new_m1 = rates[m1] - value[m1, n]
            new_m2 = rates[m2] + value[m2, n]
            trial = rates.copy()
            trial[m1] = new_m1
            trial[m2] = new_m2
            if trial.min() > cur_min:
                owner[n] = m2
                rates[m1] = new_m1
                rates[m2] = new_m2
                changed = True
        for n1 in range(num_n):
            for n2 in range(n1 + 1, num_n):
                m1, m2 = owner[n1], owner[n2]
                if m1 == m2:
                    continue
                gain = value[m1, n2] + value[m2, n1] - value[m1, n1] - value[m2, n2]
                if gain <= _EPS:
                    continue
                floor = rates.min()
                new_m1 = rates[m1] - value[m1, n1] + value[m1, n2]
                new_m2 = rates[m2] - value[m2, n2] + value[m2, n1]
                if new_m1 > floor + _EPS and new_m2 > floor + _EPS:
                    owner[n1], owner[n2] = m2, m1
                    rates[m1] = new_m1
                    rates[m2] = new_m2
                    changed = True
        if not changed:
            return


def _greedy_reinsert(
    value: np.ndarray, owner: np.ndarray, rates: np.ndarray, free: np.ndarray
) -> None:
    """Hand each freed worker to the currently lowest-rate master, best value first.

    Rates update after every single placement so later picks see the new sums.
    """
    while free.any():
        m = int(np.argmin(rates))
        candidates = np.flatnonzero(free)
        n = int(candidates[np.argmax(value[m, candidates])])
        owner[n] = m
        rates[m] += value[m, n]
        free[n] = False


def _iterated_owner(value: np.ndarray, config: GreedyConfig) -> np.ndarray:
    """Best assignment seen after any local-search phase (never after a shake-up).

    The no-improvement stop arms only once some shake-up round has beaten the
    incumbent; until then the loop keeps exploring up to max_iterations.
    """
    num_m, num_n = value.shape
    owner = np.argmax(value, axis=0).astype(int)
    rates = _owner_rates(value, owner)
    explore = config.resolved_exploration_size(num_m, num_n)
    rng = np.random.default_rng(config.rng_seed)
    best_owner = None
    best_obj = -np.inf
    improved_once = False
    stale = 0
    for _ in range(config.max_iterations):
        _local_search(value, owner, rates)
        obj = rates.min()
        if best_owner is None:
            best_obj = obj
            best_owner = owner.copy()
        elif obj > best_obj + _EPS:
            best_obj = obj
            best_owner = owner.copy()
            improved_once = True
            stale = 0
        elif improved_once:
            stale += 1
            if stale >= config.no_improve_stop:
                break
        removed = rng.choice(num_n, size=explore, replace=False)
        free = np.zeros(num_n, dtype=bool)
        for n in removed:
            rates[owner[n]] -= value[owner[n], n]
            owner[n] = -1
            free[n] = True
        _greedy_reinsert(value, owner, rates, free)
    assert best_owner is not None
    return best_owner


def _half_sums(half: np.ndarray) -> np.ndarray:
    """Per-master value sums of every assignment of the workers in `half`.

    Row index encodes the assignment base-M with the first worker as the most
    significant digit, so row order is lexicographic.
    """
    num_m, width = half.shape
    sums = np.zeros((1, num_m))
    for col in range(width):
        rows = sums.shape[0]
        sums = np.repeat(sums, num_m, axis=0)
        choice = np.tile(np.arange(num_m), rows)
        sums[np.arange(rows * num_m), choice] += half[choice, col]
    return sums


def _brute_owner(value: np.ndarray) -> np.ndarray:
    """Exact max-min assignment by meet-in-the-middle enumeration.

    Ties resolve to the lexicographically smallest owner vector because
    flat enumeration order is lexicographic and only strict improvements
    replace the incumbent.
    """
    num_m, num_n = value.shape
    if num_m**num_n > _BRUTE_FORCE_CAP:
        raise ValueError(
            f"exact search needs M^N = {num_m}**{num_n} assignments, over the {_BRUTE_FORCE_CAP:g} cap"
        )
    cut = (num_n + 1) // 2
    sums_a = _half_sums(value[:, :cut])
    sums_b = _half_sums(value[:, cut:])
    width_b = sums_b.shape[0]
    chunk = max(1, 4_000_000 // width_b)
    best_val = -np.inf
    best_flat = -1
    for start in range(0, sums_a.shape[0], chunk):
        block = sums_a[start : start + chunk]
        combined = block[:, None, 0] + sums_b[None, :, 0]
        for m in range(1, num_m):
            np.minimum(combined, block[:, None, m] + sums_b[None, :, m], out=combined)
        flat = int(np.argmax(combined))
        val = float(combined.flat[flat])
        if val > best_val:
            best_val = val
            i_a, i_b = divmod(flat, width_b)
            best_flat = (start + i_a) * width_b + i_b
    i_a, i_b = divmod(best_flat, width_b)
    owner = np.empty(num_n, dtype=int)
    for pos in range(cut - 1, -1, -1):
        i_a, digit = divmod(i_a, num_m)
        owner[pos] = digit
    for pos in range(num_n - 1, cut - 1, -1):
        i_b, digit = divmod(i_b, num_m)
        owner[pos] = digit
    return owner


def _solution(
    instance: ProblemInstance, pairs: PairTable, owner: np.ndarray
) -> AssignmentSolution:
    num_m = instance.num_masters
    rates = _owner_rates(pairs.value, owner)
    if rates.min() <= 0:
        raise RuntimeError("assignment left a master with no workers")
    loads = np.zeros((num_m, instance.num_workers))
    per_t = np.empty(num_m)
    for m in range(num_m):
        workers = np.flatnonzero(owner == m)
        row, t_m = optimal_loads_for_master(instance, m, workers, pairs)
        loads[m, workers] = row
        per_t[m] = t_m
    objective = float(rates.min())
    return AssignmentSolution(
        assignment=Assignment(AssignMode.DEDICATED, _assign_matrix(owner, num_m)),
        loads=LoadAllocation(loads),
        objective=objective,
        t_approx=float(np.max(per_t)),
        per_master_t=per_t,
        per_master_rate=rates,
    )


def simple_greedy(
    instance: ProblemInstance, pairs: PairTable | None = None
) -> AssignmentSolution:
    """Greedy seeding plus min-rate filling; deterministic."""
    if pairs is None:
        pairs = pair_values(instance)
    return _solution(instance, pairs, _simple_owner(pairs.value))


def iterated_greedy(
    instance: ProblemInstance,
    pairs: PairTable | None = None,
    config: GreedyConfig = GreedyConfig(),
) -> AssignmentSolution:
    """Local search (insertion/interchange) with randomized restarts.

    Starts from each worker's best master, alternates improvement passes with
    random shake-ups, and returns the best assignment observed right after a
    local-search phase. Deterministic for a fixed config.rng_seed.
    """
    if pairs is None:
        pairs = pair_values(instance)
    return _solution(instance, pairs, _iterated_owner(pairs.value, config))


def brute_force(
    instance: ProblemInstance, pairs: PairTable | None = None
) -> AssignmentSolution:
    """Exact max-min assignment; guarded against blow-up above M^N = 1e8."""
    if pairs is None:
        pairs = pair_values(instance)
    return _solution(instance, pairs, _brute_owner(pairs.value))


def _block_owner(instance: ProblemInstance) -> np.ndarray:
    num_m, num_n = instance.num_masters, instance.num_workers
    if num_n % num_m:
        raise ValueError(f"uniform baselines need M | N, got M={num_m}, N={num_n}")
    return np.repeat(np.arange(num_m), num_n // num_m)


def uncoded_uniform(instance: ProblemInstance) -> Schedule:
    """No-redundancy baseline: contiguous worker blocks, equal row splits.

    Every worker must finish, so there is no model completion time; t fields
    start as NaN and are filled with simulated means by the caller.
    """
    owner = _block_owner(instance)
    num_m = instance.num_masters
    per_worker = instance.required_rows.astype(float) * num_m / instance.num_workers
    loads = _assign_matrix(owner, num_m) * per_worker[:, None]
    return Schedule(
        assignment=Assignment(AssignMode.DEDICATED, _assign_matrix(owner, num_m)),
        loads=LoadAllocation(loads),
        t_approx=float("nan"),
        per_master_t=np.full(num_m, np.nan),
        uncoded=True,
        t_empirical=True,
    )


def coded_uniform(instance: ProblemInstance, pairs: PairTable | None = None) -> Schedule:
    """Coded baseline: same contiguous blocks, optimal loads within each block."""
    if pairs is None:
        pairs = pair_values(instance)
    return _solution(instance, pairs, _block_owner(instance)).schedule()
