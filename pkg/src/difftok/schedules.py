"""Marginal noise schedules for the supported model families.

Every family corrupts data through the same marginal form

    x_t = scale(t) * x0 + noise_std(t) * eps,      eps ~ N(0, I),

with ``noise_std(t) = scale(t) * sigma(t)``. Families differ only in the
pair ``(scale, sigma)`` and the time domain:

    ve / consistency   scale = 1       sigma = t             t in [0.002, 80]
    flow               scale = 1 - t   sigma = t / (1 - t)   t in [0, 0.999]
    ddpm               scale = sqrt(abar(t)), noise_std = sqrt(1 - abar(t))
                       on a T-step beta grid, with log(abar) interpolated
                       linearly between integer grid positions; t in [0, T].

Two derived coefficients drive the reverse-time ODE step:

    drift(t)        = scale'(t) / scale(t)
    diffusion_sq(t) = scale(t)^2 * d(sigma(t)^2)/dt

The flow family caps its domain at t = 0.999 so that scale(t) stays
strictly positive wherever an inversion is requested.
"""

from __future__ import annotations

import abc
import enum

import numpy as np

from .errors import ConfigError, DomainError

VE_T_MIN = 0.002
VE_T_MAX = 80.0
FLOW_T_MAX = 0.999


class ModelFamily(enum.Enum):
    """The four supported sampler families."""

    DDPM_DISCRETE = "ddpm"
    VE_SCORE = "ve"
    CONSISTENCY = "consistency"
    FLOW = "flow"

    @property
    def wire_code(self) -> int:
        return _WIRE_CODES[self]

    @classmethod
    def from_wire(cls, code: int) -> "ModelFamily":
        for family, wire in _WIRE_CODES.items():
            if wire == code:
                return family
        raise ConfigError(f"unknown family code {code}")

    @classmethod
    def parse(cls, name: str) -> "ModelFamily":
        try:
            return cls(name.lower())
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ConfigError(f"unknown family {name!r}; expected one of {valid}") from None


_WIRE_CODES = {
    ModelFamily.DDPM_DISCRETE: 0,
    ModelFamily.VE_SCORE: 1,
    ModelFamily.CONSISTENCY: 2,
    ModelFamily.FLOW: 3,
}


class DiscreteVpSchedule:
    """A T-step variance-preserving beta schedule and its cumulative products.

    ``alpha_bar[tau]`` is the product of (1 - beta) over the first ``tau``
    steps, with ``alpha_bar[0] = 1``. The grid interpretation is
    ``scale(tau) = sqrt(alpha_bar[tau])`` and
    ``noise_std(tau) = sqrt(1 - alpha_bar[tau])``, so scale^2 + noise_std^2
    is exactly 1 at every grid point.
    """

    def __init__(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.ndim != 1 or beta.size < 1:
            raise ConfigError("beta must be a non-empty 1-D sequence")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ConfigError("beta values must lie in (0, 1)")
        self.beta = beta
        self.total_steps = int(beta.size)
        self.log_alpha_bar = np.concatenate([[0.0], np.cumsum(np.log1p(-beta))])
        self.alpha_bar = np.exp(self.log_alpha_bar)

    @classmethod
    def linear(cls, total_steps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "DiscreteVpSchedule":
        return cls(np.linspace(beta_start, beta_end, total_steps))

    def scale_at(self, tau):
        return np.sqrt(self.alpha_bar[tau])

    def noise_std_at(self, tau):
        return np.sqrt(-np.expm1(self.log_alpha_bar[tau]))


class MarginalSchedule(abc.ABC):
    """Coefficients of the shared marginal x_t = scale(t) x0 + noise_std(t) eps."""

    family: ModelFamily
    t_min: float
    t_max: float

    @abc.abstractmethod
    def scale(self, t):
        """Data coefficient s(t)."""

    @abc.abstractmethod
    def noise_std(self, t):
        """Total noise standard deviation, scale(t) * sigma(t)."""

    @abc.abstractmethod
    def drift(self, t):
        """scale'(t) / scale(t)."""

    @abc.abstractmethod
    def diffusion_sq(self, t):
        """scale(t)^2 * d(sigma(t)^2)/dt."""

    def sigma(self, t):
        return self.noise_std(t) / self.scale(t)

    def check_time(self, t) -> None:
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_min - 1e-12) or np.any(t > self.t_max + 1e-12):
            raise DomainError(
                f"t={t} outside [{self.t_min}, {self.t_max}] for family "
                f"{self.family.value}"
            )


class VeSchedule(MarginalSchedule):
    """Variance-exploding marginal: scale = 1, noise_std = t.

    Shared by the score-output and consistency families, which differ only
    in what the model emits, not in the marginal path.
    """

    def __init__(self, family: ModelFamily = ModelFamily.VE_SCORE,
                 t_min: float = VE_T_MIN, t_max: float = VE_T_MAX):
        if family not in (ModelFamily.VE_SCORE, ModelFamily.CONSISTENCY):
            raise ConfigError("VeSchedule serves the ve and consistency families")
        self.family = family
        self.t_min = float(t_min)
        self.t_max = float(t_max)

    def scale(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def noise_std(self, t):
        return np.asarray(t, dtype=float)

    def drift(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def diffusion_sq(self, t):
        return 2.0 * np.asarray(t, dtype=float)


class FlowSchedule(MarginalSchedule):
    """Linear-interpolation marginal: scale = 1 - t, noise_std = t."""

    family = ModelFamily.FLOW
    t_min = 0.0
    t_max = FLOW_T_MAX

    def scale(self, t):
        return 1.0 - np.asarray(t, dtype=float)

    def noise_std(self, t):
        return np.asarray(t, dtype=float)

    def sigma(self, t):
        t = np.asarray(t, dtype=float)
        return t / (1.0 - t)

    def drift(self, t):
        return -1.0 / (1.0 - np.asarray(t, dtype=float))

    def diffusion_sq(self, t):
        t = np.asarray(t, dtype=float)
        return 2.0 * t / (1.0 - t)


class DdpmSchedule(MarginalSchedule):
    """Continuous view of a discrete VP grid, in grid units t in [0, T].

    log(alpha_bar) is interpolated linearly between integer grid
    positions, so values at integers match the grid exactly and the
    derived drift/diffusion coefficients are piecewise constant:

        drift(t)        =  slope(t) / 2
        diffusion_sq(t) = -slope(t),   slope(t) = d log(abar)/dt.
    """

    family = ModelFamily.DDPM_DISCRETE

    def __init__(self, vp: DiscreteVpSchedule | None = None):
        self.vp = vp if vp is not None else DiscreteVpSchedule.linear()
        self.t_min = 0.0
        self.t_max = float(self.vp.total_steps)

    def _segment(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.floor(t).astype(int), 0, self.vp.total_steps - 1)
        return t, k

    def _log_abar(self, t):
        t, k = self._segment(t)
        la = self.vp.log_alpha_bar
        return la[k] + (t - k) * (la[k + 1] - la[k])

    def _slope(self, t):
        _, k = self._segment(t)
        la = self.vp.log_alpha_bar
        return la[k + 1] - la[k]

    def scale(self, t):
        return np.exp(0.5 * self._log_abar(t))

    def noise_std(self, t):
        return np.sqrt(-np.expm1(self._log_abar(t)))

    def drift(self, t):
        return 0.5 * self._slope(t)

    def diffusion_sq(self, t):
        return -self._slope(t)


def default_schedule(family: ModelFamily,
                     vp: DiscreteVpSchedule | None = None) -> MarginalSchedule:
    """The standard schedule for a family (a fresh linear grid for ddpm)."""
    if family is ModelFamily.DDPM_DISCRETE:
        return DdpmSchedule(vp)
    if family is ModelFamily.FLOW:
        return FlowSchedule()
    return VeSchedule(family)


def eval_schedule(schedule, t):
    """Return (scale, sigma, noise_std) at time t.

    ``schedule`` may be a MarginalSchedule or a ModelFamily (resolved via
    :func:`default_schedule`). Raises DomainError outside the family's
    time domain.
    """
    if isinstance(schedule, ModelFamily):
        schedule = default_schedule(schedule)
    schedule.check_time(t)
    return schedule.scale(t), schedule.sigma(t), schedule.noise_std(t)
