"""Closed-form load split for a master served by a fixed worker set.

For one master with required rows L and workers Omega, the time-optimal real
load split is l_n = t / phi_n with t = L / sum_n rate_n / (1 + rate_n*phi_n),
where phi_n is the root of the stationarity identity below. The expected rows
collected by t then equal L exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lambertw import lambert_w_minus1
from .model import Assignment, ProblemInstance, clamped_exp


@dataclass(frozen=True)
class PairTable:
    """Per-(master, worker) allocation constants.

    phi[m, n]: optimal time-per-row ratio, the unique root above the shift of
    (1 + rate*phi) * exp(-rate*(phi - shift)) = 1. value[m, n]: the rate at
    which worker n alone finishes master m's task, rate / (L * (1 + rate*phi));
    a lone worker's optimal completion time is exactly 1/value, and a worker
    set completes at the sum of its values.
    """

    phi: np.ndarray
    value: np.ndarray


@dataclass(frozen=True)
class KKTReport:
    """First-order optimality residuals for one master's load split."""

    multiplier: float
    stationarity_residual_l: float
    stationarity_residual_t: float
    complementarity_residual: float


def compute_phi(rate: float, shift: float) -> float:
    """Root phi > shift of (1 + rate*phi) * exp(-rate*(phi - shift)) = 1.

    Substituting w = -(1 + rate*phi) turns the identity into w*e^w =
    -exp(-rate*shift - 1), so phi = (-W_{-1}(-e^{-rate*shift-1}) - 1) / rate.
    """
    if rate <= 0 or shift <= 0:
        raise ValueError("rate and shift must be positive")
    w = lambert_w_minus1(-math.exp(-rate * shift - 1.0))
    return (-w.value - 1.0) / rate


def pair_values(instance: ProblemInstance) -> PairTable:
    """phi and value tables for every (master, worker) pair, computed once."""
    m, n = instance.num_masters, instance.num_workers
    phi = np.empty((m, n))
    memo: dict[tuple[float, float], float] = {}
    for i in range(m):
        for j in range(n):
            key = (float(instance.straggle_rate[i, j]), float(instance.shift_per_row[i, j]))
            got = memo.get(key)
            if got is None:
                got = memo[key] = compute_phi(*key)
            phi[i, j] = got
    rate = instance.straggle_rate
    value = rate / (instance.required_rows[:, None] * (1.0 + rate * phi))
    phi.setflags(write=False)
    value.setflags(write=False)
    return PairTable(phi=phi, value=value)


def _check_workers(instance: ProblemInstance, workers: np.ndarray) -> np.ndarray:
    workers = np.asarray(workers, dtype=int).ravel()
    if workers.size == 0:
        raise ValueError("a served master needs at least one worker")
    if np.unique(workers).size != workers.size:
        raise ValueError("duplicate worker indices")
    if (workers < 0).any() or (workers >= instance.num_workers).any():
        raise ValueError("worker index out of range")
    return workers


def optimal_loads_for_master(
    instance: ProblemInstance,
    master: int,
    workers,
    pairs: PairTable | None = None,
) -> tuple[np.ndarray, float]:
    """Optimal real loads over `workers` plus the completion time t.

    Returns (loads aligned with `workers`, t). Every load is positive,
    t / load equals the pair's phi, and the expected rows at t equal the
    required rows.
    """
    workers = _check_workers(instance, workers)
    if pairs is not None:
        phi = pairs.phi[master, workers]
    else:
        phi = np.array(
            [
                compute_phi(
                    float(instance.straggle_rate[master, j]),
                    float(instance.shift_per_row[master, j]),
                )
                for j in workers
            ]
        )
    rate = instance.straggle_rate[master, workers]
    t = float(instance.required_rows[master]) / float(np.sum(rate / (1.0 + rate * phi)))
    return t / phi, t


def master_rate(pairs: PairTable, assignment: Assignment, master: int) -> float:
    """Completion rate of one master: sum of prob-weighted worker values."""
    return float(np.sum(assignment.probs[master] * pairs.value[master]))


def verify_kkt(
    instance: ProblemInstance,
    master: int,
    workers,
    loads,
    t: float,
) -> KKTReport:
    """First-order residuals of the per-master load problem at (loads, t).

    The multiplier is recovered from stationarity in t, lam = 1 / sum_n
    rate*exp(-(rate/l)(t - shift*l)); the per-load residual is then
    max_n |lam * ((1 + rate*t/l) * exp(-(rate/l)(t - shift*l)) - 1)| and the
    complementarity residual is |L - expected rows at t|.
    """
    workers = _check_workers(instance, workers)
    loads = np.asarray(loads, dtype=float).ravel()
    if loads.shape != workers.shape or (loads <= 0).any():
        raise ValueError("loads must be positive and aligned with workers")
    rate = instance.straggle_rate[master, workers]
    shift = instance.shift_per_row[master, workers]
    decay = clamped_exp(-(rate / loads) * (t - shift * loads))
    denom = float(np.sum(rate * decay))
    if denom <= 0:
        raise ValueError("degenerate point: no worker contributes at t")
    lam = 1.0 / denom
    bracket = (1.0 + rate * t / loads) * decay - 1.0
    expected = float(np.sum(loads * (1.0 - decay)))
    return KKTReport(
        multiplier=lam,
        stationarity_residual_l=float(np.max(np.abs(lam * bracket))),
        stationarity_residual_t=abs(1.0 - lam * denom),
        complementarity_residual=abs(float(instance.required_rows[master]) - expected),
    )


def round_loads(loads, required_total: int, phi) -> np.ndarray:
    """Round real loads half-up to integer rows, then repair coverage.

    If rounding drops the total below required_total, the worker with the
    largest phi absorbs the deficit. Provided for integer deployments; the
    solvers and simulator work on real loads throughout.
    """
    loads = np.asarray(loads, dtype=float)
    phi = np.asarray(phi, dtype=float)
    out = np.floor(loads + 0.5).astype(np.int64)
    deficit = int(math.ceil(required_total - out.sum()))
    if deficit > 0:
        out[int(np.argmax(phi))] += deficit
    return out
