"""Step sizes and iteration budgets for the re-noising loops.

The time axis is split into P+1 buckets, k = 0..P. Bucket step lengths
interpolate geometrically from dt_max (k=0) down to dt_min (k=P); the
total iteration budget N is divided among buckets proportionally to a
rho-warped weight that favors the small-step end:

    length(k) = dt_min^(k/P) * dt_max^((P-k)/P)
    weight(u) = (1 + u * (sigma_max^(1/rho) - 1))^rho,   u = k / P
    count(k)  = floor(weight(k/P) / sum_i weight(i/P) * N + 0.5)

Per-bucket rounding rarely sums to N exactly, so the residual is
absorbed by the smallest-step bucket, which is the cheapest to perturb.

For integer step sizes (discrete VP grids) the lengths are dt_min + k
with dt_max = dt_min + P, and each length is mapped back to a fractional
bucket position m_k before weighting:

    m_k = P * ln(dt_max / (dt_min + k)) / ln(dt_max / dt_min)

so the same budget shape applies on the integer grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, ScheduleInfeasibleError


@dataclass(frozen=True)
class ContinuousSchedule:
    """Parameters of the continuous step-length/budget schedule."""

    intervals: int          # P; buckets are k = 0..P
    dt_min: float
    dt_max: float
    rho: float
    sigma_max: float
    total: int              # N, the iteration budget

    def __post_init__(self):
        if self.intervals < 1:
            raise ConfigError("intervals (P) must be >= 1")
        if not (0.0 < self.dt_min <= self.dt_max):
            raise ConfigError("need 0 < dt_min <= dt_max")
        if self.rho <= 0.0 or self.sigma_max <= 0.0:
            raise ConfigError("rho and sigma_max must be positive")
        if self.total < self.intervals:
            raise ConfigError("total iterations N must be >= intervals P")


@dataclass(frozen=True)
class StepPlan:
    """Expanded (step length, repetition count) pairs, largest step first."""

    entries: tuple[tuple[float, int], ...]

    def __post_init__(self):
        lengths = [dt for dt, _ in self.entries]
        if any(lengths[i] < lengths[i + 1] for i in range(len(lengths) - 1)):
            raise ConfigError("step lengths must be non-increasing")
        if any(count < 0 for _, count in self.entries):
            raise ConfigError("counts must be non-negative")

    @property
    def total_count(self) -> int:
        return sum(count for _, count in self.entries)

    @property
    def span(self) -> float:
        """Sum of length * count over all entries."""
        return sum(dt * count for dt, count in self.entries)

    def expanded(self) -> list[float]:
        """Per-iteration step lengths, largest first."""
        out: list[float] = []
        for dt, count in self.entries:
            out.extend([dt] * count)
        return out


def interval_length(k: int, sched: ContinuousSchedule) -> float:
    """Geometric interpolation from dt_max (k=0) to dt_min (k=P)."""
    if not 0 <= k <= sched.intervals:
        raise ConfigError(f"bucket index {k} outside 0..{sched.intervals}")
    frac = k / sched.intervals
    return sched.dt_min**frac * sched.dt_max ** (1.0 - frac)


def _weight(u: float, rho: float, sigma_max: float) -> float:
    return (1.0 + u * (sigma_max ** (1.0 / rho) - 1.0)) ** rho


def interval_iterations(k: int, sched: ContinuousSchedule) -> int:
    """Rounded share of the budget N for bucket k."""
    if not 0 <= k <= sched.intervals:
        raise ConfigError(f"bucket index {k} outside 0..{sched.intervals}")
    p = sched.intervals
    weights = [_weight(i / p, sched.rho, sched.sigma_max) for i in range(p + 1)]
    return int(math.floor(weights[k] / sum(weights) * sched.total + 0.5))


def discrete_exponent(k: int, dt_min_int: int, intervals: int) -> float:
    """Fractional bucket position of the integer step dt_min + k.

    Solves dt_min + k = dt_min^(m/P) * dt_max^((P-m)/P) for m, with
    dt_max = dt_min + P. k=0 gives m=P, k=P gives m=0.
    """
    if dt_min_int < 1:
        raise ConfigError("dt_min must be a positive integer")
    if intervals < 1:
        raise ConfigError("intervals (P) must be >= 1")
    if not 0 <= k <= intervals:
        raise ConfigError(f"bucket index {k} outside 0..{intervals}")
    dt_max = dt_min_int + intervals
    return intervals * math.log(dt_max / (dt_min_int + k)) / math.log(dt_max / dt_min_int)


def discrete_iterations(k: int, dt_min_int: int, intervals: int, rho: float,
                        sigma_max: float, total: int) -> int:
    """Budget share for the integer step dt_min + k, via its m_k position."""
    p = intervals
    weights = [
        _weight(discrete_exponent(i, dt_min_int, p) / p, rho, sigma_max)
        for i in range(p + 1)
    ]
    return int(math.floor(weights[k] / sum(weights) * total + 0.5))


def _absorb_residual(lengths: list[float], counts: list[int], total: int) -> StepPlan:
    # entries ordered largest step first; residual lands on the final
    # (smallest-step) bucket
    counts = list(counts)
    counts[-1] += total - sum(counts)
    if counts[-1] < 0:
        raise ScheduleInfeasibleError(
            f"rounding residual drives the smallest-step count to {counts[-1]}")
    return StepPlan(entries=tuple(zip(lengths, counts)))


def build_step_plan(sched: ContinuousSchedule) -> StepPlan:
    """Expand a continuous schedule; counts sum to N exactly."""
    p = sched.intervals
    lengths = [interval_length(k, sched) for k in range(p + 1)]
    counts = [interval_iterations(k, sched) for k in range(p + 1)]
    return _absorb_residual(lengths, counts, sched.total)


def build_discrete_step_plan(dt_min_int: int, intervals: int, rho: float,
                             sigma_max: float, total: int) -> StepPlan:
    """Expand an integer-step schedule; counts sum to N exactly."""
    if total < intervals:
        raise ConfigError("total iterations N must be >= intervals P")
    ks = list(range(intervals + 1))
    lengths = [float(dt_min_int + k) for k in reversed(ks)]
    counts = [
        discrete_iterations(k, dt_min_int, intervals, rho, sigma_max, total)
        for k in reversed(ks)
    ]
    return _absorb_residual(lengths, counts, total)
