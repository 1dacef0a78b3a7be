"""Gaussian-mechanism noise calibration for an (epsilon, delta) budget."""

from __future__ import annotations

import math

import numpy as np

from certunlearn.errors import InvalidArgument, NumericalFailure
from certunlearn.numerics import log_std_normal_cdf, std_normal_cdf

MECHANISMS = ("classic", "analytic")


def sigma_classic(delta_bound: float, budget) -> float:
    """``(Delta / eps) * sqrt(2 ln(1.25 / delta))``."""
    if not budget.epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    if not 0 < budget.delta < 1.25:
        raise InvalidArgument("delta must lie in (0, 1.25)")
    if delta_bound < 0:
        raise InvalidArgument("delta_bound must be non-negative")
    return delta_bound / budget.epsilon * math.sqrt(2 * math.log(1.25 / budget.delta))


def analytic_delta(sigma: float, delta_bound: float, epsilon: float) -> float:
    """Smallest delta achieved by N(0, sigma^2) noise at sensitivity ``delta_bound``.

    Evaluates ``Phi(D/2s - e s/D) - exp(e) Phi(-D/2s - e s/D)``; the second
    term is formed in log space so large ``epsilon`` does not overflow.
    """
    if sigma <= 0:
        return 1.0
    a = delta_bound / (2 * sigma)
    b = epsilon * sigma / delta_bound
    first = float(std_normal_cdf(a - b))
    second = math.exp(epsilon + float(log_std_normal_cdf(-a - b)))
    return first - second


def sigma_analytic(delta_bound: float, budget) -> float:
    """Minimal sigma whose analytic delta does not exceed ``budget.delta``.

    Bisection starts from ``[0, max(sigma_classic, Delta / eps)]`` and runs
    down to adjacent floats, so the returned sigma satisfies the condition and
    any noticeably smaller sigma does not. For large epsilon the classic sigma
    can violate the condition; the upper end is then doubled until it holds.
    """
    if delta_bound < 0:
        raise InvalidArgument("delta_bound must be non-negative")
    if delta_bound == 0:
        return 0.0
    eps, target = budget.epsilon, budget.delta
    lo = 0.0
    hi = max(sigma_classic(delta_bound, budget), delta_bound / eps)
    for _ in range(64):
        if analytic_delta(hi, delta_bound, eps) <= target:
            break
        lo, hi = hi, 2 * hi
    else:
        raise NumericalFailure(f"sigma bracket [{lo}, {hi}] does not contain a solution")
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if analytic_delta(mid, delta_bound, eps) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate(delta_bound: float, budget, mechanism: str) -> float:
    if mechanism == "classic":
        return sigma_classic(delta_bound, budget)
    if mechanism == "analytic":
        return sigma_analytic(delta_bound, budget)
    raise InvalidArgument(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")


def implied_epsilon(delta_bound: float, sigma: float, delta: float, mechanism: str) -> float:
    """Smallest epsilon certified by a fixed noise level ``sigma`` at ``delta``."""
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    if not 0 < delta < 1:
        raise InvalidArgument("delta must lie in (0, 1)")
    if delta_bound == 0:
        return 0.0
    if mechanism == "classic":
        return delta_bound / sigma * math.sqrt(2 * math.log(1.25 / delta))
    if mechanism != "analytic":
        raise InvalidArgument(f"unknown mechanism {mechanism!r}")
    if analytic_delta(sigma, delta_bound, 0.0) <= delta:
        return 0.0
    lo, hi = 0.0, 1.0
    while analytic_delta(sigma, delta_bound, hi) > delta:
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            raise NumericalFailure("could not bracket epsilon")
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if analytic_delta(sigma, delta_bound, mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def implied_budget_range(delta_bound: float, sigma: float, mechanism: str, deltas=None) -> list[dict]:
    """(epsilon, delta) pairs certified by a fixed sigma, one per delta."""
    deltas = np.geomspace(1e-5, 0.5, 10) if deltas is None else deltas
    return [
        {"delta": float(d), "epsilon": implied_epsilon(delta_bound, sigma, float(d), mechanism)}
        for d in deltas
    ]
