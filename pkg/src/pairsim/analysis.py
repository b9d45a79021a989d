"""Closed-form analytics for DCF collision rates and the collision-run detector."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .mac import MacParams


class DcfOperatingPoint(NamedTuple):
    n_stations: int
    tau: float
    p_cond: float
    p_ch: float
    residual: float


class MarkovResult(NamedTuple):
    stationary: np.ndarray
    matrix: np.ndarray


class CostMetrics(NamedTuple):
    extra_messages: int
    key_delay: float


def _check_prob(p: float, name: str) -> None:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"{name} must lie in [0, 1), got {p}")


def stationary_alarm_prob(p_ch: float, m: int) -> float:
    """Long-run probability that the detector sits in its alarm state."""
    _check_prob(p_ch, "p_ch")
    if m < 1:
        raise ValueError("m must be >= 1")
    return (p_ch ** m - p_ch ** (m + 1)) / (1.0 - p_ch ** (m + 1))


def transition_matrix(p_ch: float, m: int) -> np.ndarray:
    P = np.zeros((m + 1, m + 1))
    for i in range(m):
        P[i, i + 1] = p_ch
        P[i, 0] = 1.0 - p_ch
    P[m, 0] = 1.0
    return P


def solve_markov_bruteforce(p_ch: float, m: int) -> MarkovResult:
    """Stationary vector of the detector chain by a direct linear solve."""
    _check_prob(p_ch, "p_ch")
    if m < 1:
        raise ValueError("m must be >= 1")
    P = transition_matrix(p_ch, m)
    # pi (P - I) = 0 with one equation swapped for sum(pi) = 1
    A = (P - np.eye(m + 1)).T
    A[-1, :] = 1.0
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    return MarkovResult(np.linalg.solve(A, rhs), P)


def false_positive_ratio(k: float, p_ch: float, m: int) -> float:
    """Expected number of alarms over `k` observed transmissions.

    An expected count, so it can exceed 1; clamp only when reporting.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    return k * stationary_alarm_prob(p_ch, m)


def minimal_m(k: float, p_ch: float, target: float, m_max: int = 10_000) -> int:
    """Smallest m whose expected alarm count over `k` observations is within `target`."""
    if p_ch >= 1.0:
        raise ValueError("p_ch >= 1: no finite m meets the target")
    if target <= 0:
        raise ValueError("target must be positive")
    for m in range(1, m_max + 1):
        if false_positive_ratio(k, p_ch, m) <= target:
            return m
    raise ValueError(f"no m <= {m_max} meets target {target}")


def channel_collision_prob(n_stations: int, tau: float) -> float:
    """Probability that a busy slot holds a collision, given n stations transmitting w.p. tau."""
    if n_stations < 1:
        raise ValueError("n_stations must be >= 1")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if n_stations == 1 or tau == 0.0:
        return 0.0
    if tau == 1.0:
        return 1.0
    idle = (1.0 - tau) ** n_stations
    single = n_stations * tau * (1.0 - tau) ** (n_stations - 1)
    return (1.0 - idle - single) / (1.0 - idle)


def tau_given_p(p: float, params: MacParams) -> float:
    """Per-slot attempt probability of a saturated station with conditional collision prob p."""
    alpha, beta, W = params.retry_limit, params.beta, params.cw_min
    attempts = sum(p ** j for j in range(alpha + 1))
    slots = sum(p ** j * (W * 2 ** min(j, beta) + 1) / 2 for j in range(alpha + 1))
    return attempts / slots


def bianchi_fixed_point(n_stations: int, params: MacParams = MacParams(),
                        tol: float = 1e-10) -> DcfOperatingPoint:
    """Saturated retry-limited DCF operating point, solved by bisection on p."""
    if n_stations < 1:
        raise ValueError("n_stations must be >= 1")

    def resid(p: float) -> float:
        return p - (1.0 - (1.0 - tau_given_p(p, params)) ** (n_stations - 1))

    lo, hi = 0.0, 1.0
    p = 0.0
    if n_stations > 1:
        for _ in range(200):
            p = 0.5 * (lo + hi)
            r = resid(p)
            if abs(r) <= tol and hi - lo < 1e-14:
                break
            if r < 0:
                lo = p
            else:
                hi = p
    r = resid(p)
    if abs(r) > tol:
        raise RuntimeError(f"bisection did not converge: n={n_stations} p={p} residual={r}")
    tau = tau_given_p(p, params)
    return DcfOperatingPoint(n_stations, tau, p, channel_collision_prob(n_stations, tau), abs(r))


def cost_metrics(m: int, T: float) -> CostMetrics:
    if m < 1:
        raise ValueError("m must be >= 1")
    return CostMetrics(2 * (m - 1), T)
