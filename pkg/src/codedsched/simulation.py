"""Monte Carlo evaluation of schedules under the shifted-exponential model.

Per-trial randomness comes from a counter-based splitmix64 hash of
(seed, trial index, pair index, purpose tag), so a report depends only on
the seed and trial count: chunking, vectorization width, and thread count
cannot change a single bit of it. Trials run in vectorized chunks.

A worker delivers its whole load at its sampled finish time; a master is
done at the first moment its delivered rows reach the requirement. Under
probabilistic assignment a trial can leave a master short of rows; such
trials are counted and excluded from every mean (averaging an infinite
completion time would say nothing useful).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    AssignMode,
    ProblemInstance,
    Schedule,
    sample_completion_time,
)

_CHUNK = 4096
# relative slack when comparing delivered rows against the requirement:
# optimal loads sum to the requirement up to float dust
_ROWS_RTOL = 1e-12

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)
# purpose tags keep the finish-time and master-choice streams disjoint
_TAG_TIME = np.uint64(0x243F6A8885A308D3)
_TAG_CHOICE = np.uint64(0x13198A2E03707344)


def _mix(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """One splitmix64 round: a 64-bit finalizer with full avalanche."""
    with np.errstate(over="ignore"):  # wrap-around is the point
        x = (x + _SM_GAMMA) & _MASK
        x = ((x ^ (x >> np.uint64(30))) * _SM_MUL1) & _MASK
        x = ((x ^ (x >> np.uint64(27))) * _SM_MUL2) & _MASK
        return x ^ (x >> np.uint64(31))


def _unit_uniforms(
    seed: int, tag: np.uint64, trials: np.ndarray, streams: np.ndarray
) -> np.ndarray:
    """Uniforms in the open interval (0, 1), one per (trial, stream) pair.

    trials and streams broadcast against each other; each output element is
    a pure function of (seed, tag, trial, stream).
    """
    h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ tag)
    h = _mix(h + trials.astype(np.uint64))
    h = _mix(h + streams.astype(np.uint64))
    # 53 mantissa bits, offset half a step: never exactly 0 or 1
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class SimConfig:
    """Trial count and stream seed; assignment mode comes from the Schedule."""

    trials: int = 10_000
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class SimulationReport:
    """Aggregates over feasible trials plus the raw per-trial completions.

    Means cover only trials where every master met its requirement, so
    overall_mean_completion (mean of the per-trial slowest master) always
    dominates each per_master_mean_completion. completion_samples holds the
    full (trials, M) matrix with +inf marking masters left short of rows.
    """

    per_master_mean_completion: np.ndarray
    overall_mean_completion: float
    infeasible_trials: int
    trials_used: int
    completion_samples: np.ndarray

    def empirical_recovery_prob(self, t: float) -> np.ndarray:
        """Fraction of all trials in which each master had its rows by time t."""
        return (self.completion_samples <= float(t)).mean(axis=0)


def _completion_from_times(
    loads: np.ndarray, times: np.ndarray, required: np.ndarray, uncoded: bool
) -> np.ndarray:
    """Per-master completion given each pair's delivery time.

    loads and times have shape (..., M, N); pairs that deliver nothing must
    carry time +inf and load 0. Returns (..., M): the moment cumulative
    delivered rows reach the requirement, +inf when they never do. Uncoded
    schedules have no redundancy, so every delivering pair must finish.
    """
    if uncoded:
        finite = np.where(np.isinf(times), -np.inf, times)
        top = finite.max(axis=-1)
        return np.where(np.isfinite(top), top, np.inf)
    order = np.argsort(times, axis=-1)
    ordered_loads = np.take_along_axis(loads, order, axis=-1)
    ordered_times = np.take_along_axis(times, order, axis=-1)
    got = np.cumsum(ordered_loads, axis=-1)
    target = required[:, None] * (1.0 - _ROWS_RTOL)
    enough = got >= target
    hit = np.argmax(enough, axis=-1)
    completion = np.take_along_axis(ordered_times, hit[..., None], axis=-1)[..., 0]
    return np.where(enough.any(axis=-1), completion, np.inf)


def _pair_times(
    instance: ProblemInstance, loads: np.ndarray, active: np.ndarray, u01: np.ndarray
) -> np.ndarray:
    """Delivery time per pair: sampled where active, +inf (load zeroed) elsewhere."""
    safe_loads = np.where(active, loads, 1.0)
    # generators hand out [0, 1); a literal 0 would mean an infinite delay
    safe_u = np.maximum(u01, np.finfo(float).tiny)
    times = sample_completion_time(
        safe_loads, instance.straggle_rate, instance.shift_per_row, safe_u
    )
    return np.where(active, times, np.inf)


def run_trial_dedicated(
    schedule: Schedule, instance: ProblemInstance, rng: np.random.Generator
) -> np.ndarray:
    """One dedicated-mode trial; returns each master's completion time."""
    loads = schedule.loads.loads
    active = (schedule.assignment.probs > 0.0) & (loads > 0.0)
    u01 = rng.random(loads.shape)
    times = _pair_times(instance, loads, active, u01)
    used = np.where(active, loads, 0.0)
    return _completion_from_times(
        used, times, instance.required_rows.astype(float), schedule.uncoded
    )


def run_trial_probabilistic(
    schedule: Schedule, instance: ProblemInstance, rng: np.random.Generator
) -> np.ndarray:
    """One probabilistic-mode trial; +inf marks masters left short of rows.

    Each worker picks a master from its probability column (or stays idle on
    the leftover mass), then behaves exactly like a dedicated worker with
    that master's load.
    """
    probs = schedule.assignment.probs
    loads = schedule.loads.loads
    num_m = instance.num_masters
    thresholds = np.cumsum(probs, axis=0)
    draw = rng.random(instance.num_workers)
    choice = (draw[None, :] > thresholds).sum(axis=0)  # num_m means idle
    serving = choice[None, :] == np.arange(num_m)[:, None]
    active = serving & (loads > 0.0)
    u01 = rng.random(loads.shape)
    times = _pair_times(instance, loads, active, u01)
    used = np.where(active, loads, 0.0)
    return _completion_from_times(
        used, times, instance.required_rows.astype(float), schedule.uncoded
    )


def simulate(
    schedule: Schedule, instance: ProblemInstance, config: SimConfig = SimConfig()
) -> SimulationReport:
    """Run config.trials independent realizations and aggregate them.

    Deterministic for a fixed (seed, trials): per-trial uniforms are hashed
    from absolute trial indices. Raises when every trial leaves some master
    short of rows, since no mean exists then.
    """
    probs = schedule.assignment.probs
    loads = schedule.loads.loads
    num_m, num_n = loads.shape
    need = instance.required_rows.astype(float)
    probabilistic = schedule.assignment.mode is AssignMode.PROBABILISTIC
    pair_streams = np.arange(num_m * num_n, dtype=np.uint64).reshape(num_m, num_n)
    worker_streams = np.arange(num_n, dtype=np.uint64)
    thresholds = np.cumsum(probs, axis=0)
    master_ids = np.arange(num_m)

    completions = np.empty((config.trials, num_m))
    for lo in range(0, config.trials, _CHUNK):
        hi = min(lo + _CHUNK, config.trials)
        trial_ids = np.arange(lo, hi, dtype=np.uint64)
        u_time = _unit_uniforms(
            config.rng_seed,
            _TAG_TIME,
            trial_ids[:, None, None],
            pair_streams[None, :, :],
        )
        if probabilistic:
            u_choice = _unit_uniforms(
                config.rng_seed,
                _TAG_CHOICE,
                trial_ids[:, None],
                worker_streams[None, :],
            )
            choice = (u_choice[:, None, :] > thresholds[None, :, :]).sum(axis=1)
            serving = choice[:, None, :] == master_ids[None, :, None]
            active = serving & (loads > 0.0)[None, :, :]
        else:
            active = np.broadcast_to(
                (probs > 0.0) & (loads > 0.0), (hi - lo, num_m, num_n)
            )
        times = _pair_times(instance, loads[None, :, :], active, u_time)
        used = np.where(active, loads[None, :, :], 0.0)
        completions[lo:hi] = _completion_from_times(
            used, times, need, schedule.uncoded
        )

    feasible = np.isfinite(completions).all(axis=1)
    trials_used = int(feasible.sum())
    if trials_used == 0:
        raise RuntimeError("every trial left some master short of rows")
    kept = completions[feasible]
    completions.setflags(write=False)
    per_master = kept.mean(axis=0)
    per_master.setflags(write=False)
    return SimulationReport(
        per_master_mean_completion=per_master,
        overall_mean_completion=float(kept.max(axis=1).mean()),
        infeasible_trials=config.trials - trials_used,
        trials_used=trials_used,
        completion_samples=completions,
    )
