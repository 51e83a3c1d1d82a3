"""Interior-point solver for the convexified subproblems.

Each outer iteration of the successive approximation hands this module a
convex program: minimize the shared deadline t subject to M surrogate
demand-coverage constraints, N per-worker probability-budget constraints,
and box bounds. A logarithmic barrier with damped Newton steps solves it.
The Hessian is assembled analytically (per-pair 2x2 blocks, the shared t
row, rank-one terms from the nonlinear constraints, and per-worker budget
blocks) into a dense buffer and factored by Cholesky; the problems here
stay small, a few hundred variables at most.

The line search backtracks from a full step under an Armijo test with an
absolute noise allowance: late barrier stages drive constraint slacks
toward the rounding floor of the surrogate evaluation, where barrier-value
differences of order eps * (mu * t) are indistinguishable from rounding,
so decreases that small must not be rejected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import ProblemInstance, clamped_exp, expected_rows
from .sca import MajorizedModel, ScaPoint, build_majorized_model, surrogate_values

# Newton decrement lambda^2 = g^T H^-1 g is affine invariant, so these
# thresholds are scale free. A stage is centered once lambda <= 1e-3; a failed
# line search with lambda <= 0.1 still counts as centered (rounding noise),
# anything worse is a genuine stall.
_STAGE_DECREMENT = 1e-6
_STALL_DECREMENT = 1e-2
_ARMIJO = 0.25
# Barrier values carry rounding error of order eps * (mu*t + log terms); the
# line search must not reject steps whose true decrease is below that floor.
_NOISE_COEFF = 1e-13
_MAX_STEPS_PER_STAGE = 60
_MAX_TOTAL_STEPS = 2000
_MAX_STAGES = 40
_MIN_STEP = 1e-14


class SolverStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SubproblemSpec:
    """One convexified program: instance data, expansion point, variable bounds."""

    instance: ProblemInstance
    expansion: ScaPoint
    l_floor: float = 1e-6
    t_floor: float = 1e-9

    def __post_init__(self) -> None:
        if self.expansion.l.shape != (
            self.instance.num_masters,
            self.instance.num_workers,
        ):
            raise ValueError("expansion point shape does not match the instance")
        if self.l_floor <= 0.0 or self.t_floor <= 0.0:
            raise ValueError("variable floors must be positive")

    @property
    def num_constraints(self) -> int:
        m, n = self.instance.num_masters, self.instance.num_workers
        return m + n + 3 * m * n + 1


@dataclass(frozen=True)
class SolverDiagnostics:
    """Run record: stage/step counts, the final gap bound, and constraint slack.

    stage_objectives holds the deadline value at the end of each barrier
    stage; tightening the barrier never moves it up.
    """

    status: SolverStatus
    outer_barrier_stages: int
    newton_steps_total: int
    final_duality_gap_bound: float
    max_constraint_violation: float
    stage_objectives: tuple[float, ...] = ()


class _State:
    """Mutable iterate plus every quantity the barrier needs at that iterate."""

    __slots__ = ("l", "k", "t", "surrogate", "col_slack", "feasible")

    def __init__(
        self, spec: SubproblemSpec, model: MajorizedModel, l: np.ndarray, k: np.ndarray, t: float
    ) -> None:
        self.l = l
        self.k = k
        self.t = t
        self.col_slack = 1.0 - k.sum(axis=0)
        # bounds first: surrogate_values needs t >= 0 and l > 0 to stay finite
        in_box = bool(
            np.all(self.col_slack > 0.0)
            and np.all(l > spec.l_floor)
            and np.all(k > 0.0)
            and np.all(k < 1.0)
            and t > spec.t_floor
        )
        if in_box:
            self.surrogate = surrogate_values(model, spec.instance, l, k, t)
            self.feasible = bool(np.all(self.surrogate < 0.0))
        else:
            self.surrogate = None
            self.feasible = False

    def barrier_value(self, spec: SubproblemSpec, mu: float) -> float:
        if not self.feasible:
            return np.inf
        return float(
            mu * self.t
            - np.log(-self.surrogate).sum()
            - np.log(self.col_slack).sum()
            - np.log(self.l - spec.l_floor).sum()
            - np.log(self.k).sum()
            - np.log(1.0 - self.k).sum()
            - np.log(self.t - spec.t_floor)
        )


class _AssemblyPlan:
    """Index scaffolding and scratch buffer for the Newton system.

    Everything here depends only on the problem shape, so one plan serves
    every Newton step of a solve.
    """

    __slots__ = ("mn", "dim", "idx_l", "idx_k", "idx_t", "flat_l", "flat_k",
                 "master_mesh", "col_i", "col_j", "hess")

    def __init__(self, num_m: int, num_n: int) -> None:
        mn = num_m * num_n
        self.mn = mn
        self.dim = 2 * mn + 1
        self.idx_l = np.arange(mn).reshape(num_m, num_n)
        self.idx_k = mn + self.idx_l
        self.idx_t = 2 * mn
        self.flat_l = self.idx_l.ravel()
        self.flat_k = self.idx_k.ravel()
        rows_for = [
            np.concatenate([self.idx_l[m], self.idx_k[m], [self.idx_t]])
            for m in range(num_m)
        ]
        self.master_mesh = [np.ix_(rows, rows) for rows in rows_for]
        # all (m1, m2) pairs of k-rows within one worker column, for the
        # probability-budget curvature blocks
        self.col_i = np.broadcast_to(
            self.idx_k[:, None, :], (num_m, num_m, num_n)
        )
        self.col_j = np.broadcast_to(
            self.idx_k[None, :, :], (num_m, num_m, num_n)
        )
        self.hess = np.empty((self.dim, self.dim))


def _newton_direction(
    spec: SubproblemSpec,
    model: MajorizedModel,
    state: _State,
    mu: float,
    plan: _AssemblyPlan,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Solve the barrier Newton system; returns (dl, dk, dt, decrement)."""
    instance = spec.instance
    u = instance.straggle_rate
    l, k, t = state.l, state.k, state.t
    amp = model.amp

    q = u * t / l
    decay = clamped_exp(-q)
    psi = l * decay
    psi_l = decay * (1.0 + q)
    psi_t = -u * decay
    psi_ll = decay * q * q / l
    psi_lt = -decay * u * u * t / (l * l)
    psi_tt = u * u * decay / l
    s = k + psi

    # surrogate gradients: per-pair (l, k) components and the shared t component
    grad_sur_l = l + amp * s * psi_l - model.coeff_l
    grad_sur_k = k + amp * s - model.coeff_k
    grad_sur_t = (amp * s * psi_t).sum(axis=1) - model.coeff_t

    w1 = 1.0 / (-state.surrogate)  # positive barrier weights, one per master
    w2 = w1 * w1

    # gradient of the barrier function
    g_l = (
        grad_sur_l * w1[:, None]
        - 1.0 / (l - spec.l_floor)
    )
    g_k = (
        grad_sur_k * w1[:, None]
        + 1.0 / state.col_slack[None, :]
        - 1.0 / k
        + 1.0 / (1.0 - k)
    )
    g_t = float(
        mu
        + np.dot(grad_sur_t, w1)
        - 1.0 / (state.t - spec.t_floor)
    )

    # arrow part: per-pair 2x2 blocks, t couplings, and the t diagonal
    curve = w1[:, None]
    h_ll = curve * (1.0 + amp * (psi_l * psi_l + s * psi_ll)) + 1.0 / (l - spec.l_floor) ** 2
    h_kk = curve * (1.0 + amp) + 1.0 / (k * k) + 1.0 / ((1.0 - k) * (1.0 - k))
    h_lk = curve * amp * psi_l
    h_lt = curve * amp * (psi_l * psi_t + s * psi_lt)
    h_kt = curve * amp * psi_t
    h_tt = float(
        (curve * amp * (psi_t * psi_t + s * psi_tt)).sum()
        + 1.0 / (state.t - spec.t_floor) ** 2
    )

    # dense assembly: variables ordered (l row-major, k row-major, t)
    num_m, num_n = l.shape
    mn = plan.mn
    idx_t = plan.idx_t
    hess = plan.hess
    hess.fill(0.0)
    hess[plan.flat_l, plan.flat_l] = h_ll.ravel()
    hess[plan.flat_k, plan.flat_k] = h_kk.ravel()
    hess[plan.flat_l, plan.flat_k] = h_lk.ravel()
    hess[plan.flat_k, plan.flat_l] = h_lk.ravel()
    hess[plan.flat_l, idx_t] = h_lt.ravel()
    hess[idx_t, plan.flat_l] = h_lt.ravel()
    hess[plan.flat_k, idx_t] = h_kt.ravel()
    hess[idx_t, plan.flat_k] = h_kt.ravel()
    hess[idx_t, idx_t] = h_tt
    for m in range(num_m):
        vec = np.concatenate([grad_sur_l[m], grad_sur_k[m], [grad_sur_t[m]]])
        hess[plan.master_mesh[m]] += w2[m] * np.outer(vec, vec)
    inv_slack2 = 1.0 / (state.col_slack * state.col_slack)
    hess[plan.col_i, plan.col_j] += inv_slack2

    grad = np.concatenate([g_l.ravel(), g_k.ravel(), [g_t]])
    # the barrier Hessian is positive definite (convex surrogate plus box
    # terms), so Cholesky is the cheapest factorization; rounding can spoil
    # definiteness right at the boundary, where an LU solve still works
    try:
        factor = cho_factor(hess, lower=True, check_finite=False)
        direction = cho_solve(factor, -grad, check_finite=False)
    except np.linalg.LinAlgError:
        try:
            direction = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            zero = np.zeros_like(l)
            return zero, zero, 0.0, -1.0
    d_l = direction[:mn].reshape(num_m, num_n)
    d_k = direction[mn : 2 * mn].reshape(num_m, num_n)
    d_t = float(direction[idx_t])

    decrement = -float(np.dot(grad, direction))
    return d_l, d_k, d_t, decrement


def _initial_mu(spec: SubproblemSpec, model: MajorizedModel, state: _State) -> float:
    """Barrier weight whose centering condition the start point already matches in t.

    Successive solves start where the previous one ended, which is far along
    the central path; restarting the schedule at mu = 1 would drag the point
    back to the analytic center and then re-walk the path. Solving the
    t-component of the centering equation for mu skips that round trip.
    """
    u = spec.instance.straggle_rate
    decay = clamped_exp(-u * state.t / state.l)
    s = state.k + state.l * decay
    grad_sur_t = (model.amp * s * (-u * decay)).sum(axis=1) - model.coeff_t
    w1 = 1.0 / (-state.surrogate)
    mu_star = 1.0 / (state.t - spec.t_floor) - float(np.dot(grad_sur_t, w1))
    if not np.isfinite(mu_star):
        return 1.0
    return float(min(max(1.0, mu_star), 1e12))


def solve_subproblem(
    spec: SubproblemSpec,
    mu0: float | None = None,
    mu_factor: float = 10.0,
    gap_tol: float = 1e-8,
) -> tuple[ScaPoint, SolverDiagnostics]:
    """Minimize t over the convexified feasible set, starting at the expansion point.

    The expansion point must be strictly feasible for its own surrogate
    constraints. The returned deadline never exceeds the expansion point's,
    and the returned point is strictly inside every constraint. mu0 of None
    picks the barrier start weight matching the expansion point.
    """
    if mu0 is not None and mu0 <= 0.0:
        raise ValueError("barrier schedule parameters out of range")
    if mu_factor <= 1.0 or gap_tol <= 0.0:
        raise ValueError("barrier schedule parameters out of range")
    model = build_majorized_model(spec.instance, spec.expansion)
    start = _State(
        spec, model, spec.expansion.l.copy(), spec.expansion.k.copy(), spec.expansion.t
    )
    if not start.feasible:
        raise ValueError("expansion point is not strictly feasible for the subproblem")

    state = start
    mu = _initial_mu(spec, model, start) if mu0 is None else mu0
    total_constraints = float(spec.num_constraints)
    plan = _AssemblyPlan(spec.instance.num_masters, spec.instance.num_workers)
    stages = 0
    steps_total = 0
    stalled = False
    stage_objectives: list[float] = []
    for _ in range(_MAX_STAGES):
        stages += 1
        best_decrement = np.inf
        slow_steps = 0
        for _ in range(_MAX_STEPS_PER_STAGE):
            if steps_total >= _MAX_TOTAL_STEPS:
                break
            d_l, d_k, d_t, decrement = _newton_direction(spec, model, state, mu, plan)
            if not np.isfinite(decrement) or decrement < -_STALL_DECREMENT:
                stalled = True
                break
            if decrement <= _STAGE_DECREMENT:
                break
            # rounding keeps lambda from certifying 1e-3 on some stages; once
            # it is near-centered and no longer shrinking, more steps only wander
            if decrement < 0.5 * best_decrement:
                best_decrement = decrement
                slow_steps = 0
            elif decrement <= _STALL_DECREMENT:
                slow_steps += 1
                if slow_steps >= 8:
                    break
            steps_total += 1
            base = state.barrier_value(spec, mu)
            noise = _NOISE_COEFF * (mu * abs(state.t) + 30.0 * total_constraints)
            alpha = 1.0
            accepted = None
            while alpha >= _MIN_STEP:
                trial = _State(
                    spec,
                    model,
                    state.l + alpha * d_l,
                    state.k + alpha * d_k,
                    state.t + alpha * d_t,
                )
                if trial.feasible and trial.barrier_value(spec, mu) <= (
                    base - _ARMIJO * alpha * decrement + noise
                ):
                    accepted = trial
                    break
                alpha *= 0.5
            if accepted is None:
                # no representable step improves the barrier: the stage is as
                # centered as double precision allows
                break
            state = accepted
        stage_objectives.append(state.t)
        gap_bound = total_constraints / mu
        if gap_bound <= gap_tol * (1.0 + abs(state.t)) or stalled or steps_total >= _MAX_TOTAL_STEPS:
            break
        mu *= mu_factor

    gap_bound = total_constraints / mu
    gap_ok = gap_bound <= gap_tol * (1.0 + abs(state.t))
    if gap_ok:
        status = SolverStatus.OPTIMAL
    elif stalled:
        status = SolverStatus.NUMERICAL_FAILURE
    else:
        status = SolverStatus.MAX_ITERATIONS

    # the expansion point is feasible, so never return anything worse than it
    if state.t > spec.expansion.t:
        state = start
    violation = float(
        max(
            0.0,
            state.surrogate.max(),
            (-state.col_slack).max(),
            (spec.l_floor - state.l).max(),
            (-state.k).max(),
            (state.k - 1.0).max(),
            spec.t_floor - state.t,
        )
    )
    point = ScaPoint(l=state.l, k=state.k, t=state.t)
    return point, SolverDiagnostics(
        status=status,
        outer_barrier_stages=stages,
        newton_steps_total=steps_total,
        final_duality_gap_bound=gap_bound,
        max_constraint_violation=violation,
        stage_objectives=tuple(stage_objectives),
    )


def feasibility_restore(point: ScaPoint, instance: ProblemInstance) -> ScaPoint:
    """Scale the deadline up until every master's exact demand constraint holds.

    Loads and probabilities pass through unchanged. Raises if some master can
    never be satisfied (its total expected capacity falls short of demand).
    """
    need = instance.required_rows.astype(float)
    capacity = (point.k * point.l).sum(axis=1)
    if np.any(capacity < need * (1.0 + 1e-9)):
        raise ValueError("demand exceeds expected capacity; no deadline can restore feasibility")

    def satisfied(t: float) -> bool:
        got = expected_rows(
            point.l, point.k, instance.straggle_rate, instance.shift_per_row, t
        ).sum(axis=1)
        return bool(np.all(got >= need * (1.0 + 1e-9)))

    if point.t > 0.0 and satisfied(point.t):
        return point
    hi = max(point.t, 1.0)
    for _ in range(400):
        if satisfied(hi):
            break
        hi *= 2.0
    else:
        raise ValueError("deadline search failed to bracket feasibility")
    lo = point.t
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if satisfied(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(hi, 1.0):
            break
    return ScaPoint(l=point.l, k=point.k, t=hi)
