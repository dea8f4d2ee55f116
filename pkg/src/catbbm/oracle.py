"""Closed-form moments and bounds for the catalytic branching system.

Deterministic ground truth used by the verification harness: the exact
first moment of the number of particles above a level, the population
expectation, second/cross-moment upper bounds, the two-time product-moment
bound with its four error terms, the limit-law CDF functional, and the
almost-sure fluctuation envelopes.  Everything is a pure function; large
exponentials multiplying tiny normal tails are assembled in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .randkit import std_normal_cdf, std_normal_logcdf

__all__ = [
    "MomentQuery",
    "TwoTimeQuery",
    "TwoTimeBound",
    "expected_count_above",
    "count_above_time_zero",
    "expected_count_upper",
    "expected_count_origin",
    "expected_count_origin_bound",
    "expected_population",
    "expected_population_upper",
    "expected_population_origin",
    "expected_population_origin_bound",
    "local_time_integral_bound",
    "second_moment_bound",
    "cross_moment_bound",
    "two_time_bound",
    "w_limit_cdf",
    "fluctuation_envelopes",
]


@dataclass(frozen=True)
class MomentQuery:
    """Inputs for the single-time moment formulas: start x0, time t, level x."""

    x0: float
    t: float
    x: float
    beta: float

    def __post_init__(self) -> None:
        if not self.t > 0.0:
            raise ValueError(f"MomentQuery requires t > 0, got {self.t}")
        if self.x < 0.0:
            raise ValueError(f"MomentQuery requires x >= 0, got {self.x}")
        if not self.beta > 0.0:
            raise ValueError(f"MomentQuery requires beta > 0, got {self.beta}")


@dataclass(frozen=True)
class TwoTimeQuery:
    """Inputs for the two-time product-moment bound: 0 < s < t, 0 <= x < y."""

    x0: float
    s: float
    t: float
    x: float
    y: float
    beta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.s < self.t:
            raise ValueError(f"TwoTimeQuery requires 0 < s < t, got s={self.s}, t={self.t}")
        if not 0.0 <= self.x < self.y:
            raise ValueError(f"TwoTimeQuery requires 0 <= x < y, got x={self.x}, y={self.y}")
        if not self.beta > 0.0:
            raise ValueError(f"TwoTimeQuery requires beta > 0, got {self.beta}")


@dataclass(frozen=True)
class TwoTimeBound:
    total: float
    leading: float
    e1: float
    e2: float
    e3: float
    e4: float


def expected_count_above(q: MomentQuery) -> float:
    """Expected number of particles at or above level x at time t, start x0."""
    b, t, x, x0 = q.beta, q.t, q.x, q.x0
    rt = math.sqrt(t)
    value = math.exp(
        -b * abs(x0) - b * x + 0.5 * b * b * t + std_normal_logcdf((b * t - abs(x0) - x) / rt)
    )
    if x0 >= 0.0:
        value += std_normal_cdf((x + x0) / rt) - std_normal_cdf((x - x0) / rt)
    return value


def count_above_time_zero(x0: float, x: float) -> float:
    """t = 0 convention for the count above x: the start-position indicator."""
    return 1.0 if x0 >= x else 0.0


def expected_count_upper(q: MomentQuery) -> float:
    """Simple upper bound on the count above x, valid for every start."""
    b, t, x, x0 = q.beta, q.t, q.x, q.x0
    return math.exp(-b * abs(x0) - b * x + 0.5 * b * b * t) + std_normal_cdf(
        -(x - x0) / math.sqrt(t)
    )


def expected_count_origin(t: float, x: float, beta: float) -> float:
    """Count-above expectation specialized to a start at the catalyst."""
    if t <= 0.0:
        raise ValueError(f"requires t > 0, got {t}")
    if x < 0.0:
        raise ValueError(f"requires x >= 0, got {x}")
    return math.exp(
        -beta * x + 0.5 * beta * beta * t + std_normal_logcdf((beta * t - x) / math.sqrt(t))
    )


def expected_count_origin_bound(t: float, x: float, beta: float) -> float:
    """The exponential envelope of the origin-start count expectation."""
    return math.exp(-beta * x + 0.5 * beta * beta * t)


def expected_population(x0: float, t: float, beta: float) -> float:
    """Expected total population at time t for a start at x0."""
    if t <= 0.0:
        raise ValueError(f"requires t > 0, got {t}")
    rt = math.sqrt(t)
    a = abs(x0)
    value = 2.0 * math.exp(
        -beta * a + 0.5 * beta * beta * t + std_normal_logcdf(beta * rt - a / rt)
    )
    return value + std_normal_cdf(a / rt) - std_normal_cdf(-a / rt)


def expected_population_upper(x0: float, t: float, beta: float) -> float:
    """Always-valid population bound 1 + 2 exp(-beta|x0| + beta^2 t / 2)."""
    return 1.0 + 2.0 * math.exp(-beta * abs(x0) + 0.5 * beta * beta * t)


def expected_population_origin(t: float, beta: float) -> float:
    """Population expectation for a start at the catalyst."""
    if t <= 0.0:
        raise ValueError(f"requires t > 0, got {t}")
    return 2.0 * math.exp(0.5 * beta * beta * t) * std_normal_cdf(beta * math.sqrt(t))


def expected_population_origin_bound(t: float, beta: float) -> float:
    return 2.0 * math.exp(0.5 * beta * beta * t)


def local_time_integral_bound(x0: float, beta: float) -> float:
    """Bound on the discounted Stieltjes integral against exp(beta * local time)."""
    return 4.0 * math.exp(-beta * abs(x0))


def second_moment_bound(q: MomentQuery) -> float:
    """Upper bound on the second moment of the count above x."""
    b, t, x, x0 = q.beta, q.t, q.x, q.x0
    return expected_count_above(q) + 8.0 * math.exp(-b * abs(x0) - 2.0 * b * x + b * b * t)


def cross_moment_bound(q: MomentQuery) -> float:
    """Upper bound on E[count above x * total population]."""
    b, t, x, x0 = q.beta, q.t, q.x, q.x0
    return expected_count_above(q) + 16.0 * math.exp(-b * abs(x0) - b * x + b * b * t)


def two_time_bound(q: TwoTimeQuery) -> TwoTimeBound:
    """Upper bound on E[count(s) above x * count(t) above y], with error terms.

    The leading term carries the product of the two exponential envelopes;
    e1..e4 collect the boundary contributions, each vanishing when y >> x
    and t >> s.  The e2/e3 products of huge exponentials with tiny normal
    tails are assembled in log space.
    """
    b, x0, s, t, x, y = q.beta, q.x0, q.s, q.t, q.x, q.y
    gap = t - s
    rgap = math.sqrt(gap)
    leading = 24.0 * math.exp(-b * abs(x0) - b * x - b * y + 0.5 * b * b * (s + t))
    count_s = expected_count_above(MomentQuery(x0=x0, t=s, x=x, beta=b))
    e1 = (math.exp(-b * y + 0.5 * b * b * gap) + std_normal_cdf(-(y - x) / rgap)) * count_s
    e2 = 16.0 * math.exp(-b * abs(x0) - b * x + b * b * s + std_normal_logcdf(-y / rgap))
    e3 = math.exp(
        -b * abs(x0) - b * y + 0.5 * b * b * t + std_normal_logcdf((y - x) / rgap - b * rgap)
    )
    e4 = std_normal_cdf(-(x - x0) / math.sqrt(s))
    return TwoTimeBound(
        total=leading + e1 + e2 + e3 + e4, leading=leading, e1=e1, e2=e2, e3=e3, e4=e4
    )


def w_limit_cdf(x: float, beta: float, m_samples) -> float:
    """CDF of the recentred-rightmost limit at x, from martingale-limit samples.

    Averages exp(-exp(-beta*x) * m) over the supplied samples of the
    martingale limit.
    """
    m = np.asarray(m_samples, dtype=float)
    if m.size == 0:
        raise ValueError("w_limit_cdf requires a nonempty sample set")
    if np.any(m <= 0.0):
        raise ValueError("martingale-limit samples must all be > 0")
    with np.errstate(over="ignore"):
        weight = math.exp(-beta * x) if -beta * x < 700.0 else math.inf
        return float(np.mean(np.exp(-weight * m)))


def fluctuation_envelopes(t: float, beta: float) -> tuple[float, float, float]:
    """Centre line beta*t/2 with the log t upper and -log log t lower envelopes."""
    if t <= math.e:
        raise ValueError(f"envelopes require t > e so that log log t > 0, got {t}")
    center = 0.5 * beta * t
    return (
        center,
        center + math.log(t) / beta,
        center - math.log(math.log(t)) / beta,
    )
