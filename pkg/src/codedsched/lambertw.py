"""Real lower branch W_{-1} of the Lambert W function.

Solves w * exp(w) = x for the branch w <= -1, defined for x in [-1/e, 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

_BRANCH_X = -math.exp(-1.0)
_BRANCH_SLACK = 1e-16
_SERIES_CUTOFF = 1e-8
_MAX_HALLEY = 50
_EPS = math.ulp(1.0)


@dataclass(frozen=True)
class LambertResult:
    value: float
    iterations: int
    residual: float


def lambert_w_minus1(x: float) -> LambertResult:
    """W_{-1}(x) for x in [-1/e, 0).

    Halley iteration from the asymptotic guess log(-x) - log(-log(-x)),
    safeguarded by a bracket so a bad step falls back to bisection. Within
    1e-8 of the branch point the iteration loses its footing (the root is
    nearly double), so a square-root series in sqrt(2*(1 + e*x)) takes over.
    """
    x = float(x)
    if not x < 0:
        raise ValueError(f"W_-1 is defined on [-1/e, 0); got {x!r}")
    if x < _BRANCH_X - _BRANCH_SLACK:
        raise ValueError(f"W_-1 is defined on [-1/e, 0); got {x!r} < -1/e")
    if x <= _BRANCH_X:
        return LambertResult(-1.0, 0, abs(-math.exp(-1.0) - x))

    if x - _BRANCH_X < _SERIES_CUTOFF:
        p = math.sqrt(2.0 * (1.0 + math.e * x))
        w = -1.0 - p - p * p / 3.0
        return LambertResult(w, 0, abs(w * math.exp(w) - x))

    # Bracket the root: for x = -exp(-u-1) with u > 0,
    # -1 - sqrt(2u) - u <= W_-1(x) <= -1 - sqrt(2u) - 2u/3.
    u = max(-math.log(-x) - 1.0, 0.0)
    s = math.sqrt(2.0 * u)
    lo = -1.0 - s - u
    hi = -1.0 - s - (2.0 / 3.0) * u

    w = math.log(-x) - math.log(-math.log(-x))
    if not lo <= w <= hi:
        w = 0.5 * (lo + hi)

    iterations = 0
    for _ in range(_MAX_HALLEY):
        ew = math.exp(w)
        f = w * ew - x
        if f == 0.0:
            break
        if f > 0.0:
            lo = max(lo, w)  # root is above: f decreases toward it
        else:
            hi = min(hi, w)
        fp = (w + 1.0) * ew
        denom = fp - f * (w + 2.0) / (2.0 * (w + 1.0))
        step_ok = math.isfinite(denom) and denom != 0.0
        w_new = w - f / denom if step_ok else 0.5 * (lo + hi)
        if not lo < w_new < hi:
            w_new = 0.5 * (lo + hi)
        iterations += 1
        done = abs(w_new - w) <= 4.0 * abs(w_new) * _EPS
        w = w_new
        if done:
            break

    return LambertResult(w, iterations, abs(w * math.exp(w) - x))
