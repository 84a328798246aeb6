"""Special functions and log-domain helpers.

Digamma, trigamma and tetragamma are evaluated by upward recurrence until the
argument exceeds a threshold, followed by the Bernoulli asymptotic series.
The characteristic direction of the stationary log-gamma polymer and its
inverse are built on trigamma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# B_2, B_4, ..., B_18
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
)
_SHIFT = 8.0
NEG_INF = -math.inf


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def log_sum_exp(a: float, b: float) -> float:
    """log(e^a + e^b) with a max shift. -inf is absorbing."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a >= b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _check_positive(x: float) -> float:
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise DomainError(f"argument must be positive and finite, got {x!r}")
    return x


def digamma(x: float) -> float:
    x = _check_positive(x)
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        series += b / (2 * k) * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    x = _check_positive(x)
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv
    for b in _BERNOULLI:
        series += b * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series


def tetragamma(x: float) -> float:
    """Second derivative of digamma (the derivative of trigamma)."""
    x = _check_positive(x)
    acc = 0.0
    while x < _SHIFT:
        acc -= 2.0 / (x * x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        series += (2 * k + 1) * b * power
        power *= inv2
    return acc - inv2 - inv2 * inv - series


digamma_array = np.vectorize(digamma, otypes=[float])
trigamma_array = np.vectorize(trigamma, otypes=[float])


def check_rho(rho: float) -> float:
    rho = float(rho)
    if not 0.0 < rho < 1.0:
        raise DomainError(f"parameter must lie in (0, 1), got {rho!r}")
    return rho


@dataclass(frozen=True)
class Direction:
    """A direction strictly between e2 and e1, stored by its first coordinate."""

    xi1: float

    def __post_init__(self):
        if not 0.0 < self.xi1 < 1.0:
            raise DomainError(f"direction must lie strictly inside the quadrant, got xi1={self.xi1!r}")

    @property
    def xi2(self) -> float:
        return 1.0 - self.xi1

    def as_tuple(self) -> tuple[float, float]:
        return (self.xi1, self.xi2)


def characteristic_direction(rho: float) -> Direction:
    """First coordinate trigamma(rho) / (trigamma(rho) + trigamma(1 - rho))."""
    rho = check_rho(rho)
    a = trigamma(rho)
    b = trigamma(1.0 - rho)
    return Direction(a / (a + b))


def characteristic_parameter(xi, tol: float = 1e-12) -> float:
    """Inverse of characteristic_direction by bisection.

    Solves xi2 * trigamma(rho) - xi1 * trigamma(1 - rho) = 0, which is
    decreasing in rho, to absolute tolerance ``tol``.
    """
    xi1 = xi.xi1 if isinstance(xi, Direction) else float(xi)
    if not 0.0 < xi1 < 1.0:
        raise DomainError(f"direction must lie strictly inside the quadrant, got xi1={xi1!r}")
    xi2 = 1.0 - xi1
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= 0.0 or mid >= 1.0:
            break
        f = xi2 * trigamma(mid) - xi1 * trigamma(1.0 - mid)
        if f > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_increment(rho0: float, delta: float) -> None:
    check_rho(rho0)
    if not abs(delta) < 0.5 * min(rho0, 1.0 - rho0):
        raise DomainError("increment must satisfy |delta| < min(rho0, 1 - rho0) / 2")


def slope_increment(rho0: float, delta: float) -> float:
    """Change of trigamma(1 - rho) / trigamma(rho) when rho0 moves to rho0 + delta."""
    _check_increment(rho0, delta)
    r = rho0 + delta
    return trigamma(1.0 - r) / trigamma(r) - trigamma(1.0 - rho0) / trigamma(rho0)


def slope_coefficient(rho0: float) -> float:
    """Derivative of slope_increment in delta at delta = 0 (positive on (0, 1))."""
    rho0 = check_rho(rho0)
    a = trigamma(rho0)
    b = trigamma(1.0 - rho0)
    return -(tetragamma(1.0 - rho0) * a + tetragamma(rho0) * b) / (a * a)
