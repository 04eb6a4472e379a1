"""Core algebra on the shared marginal: prediction inversion and steps.

Whatever a model emits (noise, clean data, velocity, or score), the
output is a fixed linear combination of the clean sample and the noise,

    o_t = h_t * x0 + w_t * eps.

Solving that jointly with x_t = scale * x0 + noise_std * eps recovers the
model-implied pair (x0_hat, eps_hat), from which both the reverse-ODE
Euler step and the direct jump

    x_{t-dt} = scale(t-dt) * x0_hat + noise_std(t-dt) * eps_hat

are available. The two steps agree to second order in dt; when scale and
noise_std are both affine in t they coincide exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularityError
from .schedules import MarginalSchedule, ModelFamily

SINGULAR_DET_TOL = 1e-12
EXACT_MATCH_TOL = 1e-13


@dataclass(frozen=True)
class PredictionCoefficients:
    """Coefficients (h, w) of the model-output form o = h*x0 + w*eps."""

    h: float
    w: float


@dataclass
class StatePair:
    """The model-implied clean sample and unit-variance noise at one state."""

    x0_hat: np.ndarray
    eps_hat: np.ndarray


def prediction_coefficients(schedule: MarginalSchedule, t) -> PredictionCoefficients:
    """The (h, w) pair for the schedule's family at time t.

    noise prediction: (0, 1); clean-data prediction: (1, 0);
    velocity on the linear path: (-1, 1); score output: (0, -1/noise_std).
    """
    schedule.check_time(t)
    family = schedule.family
    if family is ModelFamily.DDPM_DISCRETE:
        return PredictionCoefficients(0.0, 1.0)
    if family is ModelFamily.CONSISTENCY:
        return PredictionCoefficients(1.0, 0.0)
    if family is ModelFamily.FLOW:
        return PredictionCoefficients(-1.0, 1.0)
    total = float(schedule.noise_std(t))
    if total == 0.0:
        raise SingularityError("score output undefined where noise_std(t) = 0")
    return PredictionCoefficients(0.0, -1.0 / total)


def marginal_forward(x0: np.ndarray, eps: np.ndarray, t,
                     schedule: MarginalSchedule) -> np.ndarray:
    """Corrupt x0 with eps: scale(t) * x0 + noise_std(t) * eps."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    schedule.check_time(t)
    return schedule.scale(t) * x0 + schedule.noise_std(t) * eps


def invert_prediction(o_t: np.ndarray, x_t: np.ndarray, t,
                      schedule: MarginalSchedule,
                      coeffs: PredictionCoefficients | None = None) -> StatePair:
    """Solve {o = h*x0 + w*eps, x = s*x0 + S*eps} for (x0_hat, eps_hat).

    Refuses near-singular systems (|S*h - w*s| <= 1e-12) so degenerate
    configurations fail loudly instead of being regularized away.
    """
    if coeffs is None:
        coeffs = prediction_coefficients(schedule, t)
    o_t = np.asarray(o_t, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    if o_t.shape != x_t.shape:
        raise ValueError(f"shape mismatch: o_t {o_t.shape} vs x_t {x_t.shape}")
    s = float(schedule.scale(t))
    total = float(schedule.noise_std(t))
    h, w = coeffs.h, coeffs.w
    det = total * h - w * s
    if abs(det) <= SINGULAR_DET_TOL:
        raise SingularityError(
            f"prediction inversion singular for family {schedule.family.value} "
            f"at t={t} (det={det:.3e})"
        )
    x0_hat = (total * o_t - w * x_t) / det
    eps_hat = (s * o_t - h * x_t) / (s * w - h * total)
    return StatePair(x0_hat=x0_hat, eps_hat=eps_hat)


def score_from_prediction(x_t: np.ndarray, x0_hat: np.ndarray, t,
                          schedule: MarginalSchedule) -> np.ndarray:
    """Marginal score implied by a clean-data prediction:
    -(x_t - scale*x0_hat) / noise_std^2."""
    schedule.check_time(t)
    total = float(schedule.noise_std(t))
    if total <= 0.0:
        raise SingularityError("score undefined where noise_std(t) = 0")
    return -(np.asarray(x_t, float) - schedule.scale(t) * np.asarray(x0_hat, float)) / total**2


def ode_euler_step(x_t: np.ndarray, t, dt, score: np.ndarray,
                   schedule: MarginalSchedule) -> np.ndarray:
    """One explicit Euler step of the reverse-time probability-flow ODE.

    x_{t-dt} = x_t - (drift(t)*x_t - diffusion_sq(t)/2 * score) * dt
    """
    if t - dt < schedule.t_min - 1e-12:
        raise DomainError(f"step from t={t} by dt={dt} leaves the time domain")
    f = schedule.drift(t)
    g_sq = schedule.diffusion_sq(t)
    return np.asarray(x_t, float) - (f * np.asarray(x_t, float) - 0.5 * g_sq * score) * dt


def exact_jump_step(pair: StatePair, t, dt, schedule: MarginalSchedule) -> np.ndarray:
    """Re-evaluate the marginal at t-dt with the state's implied pair."""
    if t - dt < schedule.t_min - 1e-12:
        raise DomainError(f"jump from t={t} by dt={dt} leaves the time domain")
    target = t - dt
    return schedule.scale(target) * pair.x0_hat + schedule.noise_std(target) * pair.eps_hat


def local_order_ratio(backend, t: float, dt: float, trials: int,
                      rng: np.random.Generator) -> float | None:
    """Mean ratio |jump(dt) - euler(dt)| / |jump(dt/2) - euler(dt/2)|.

    Each trial draws a fresh marginal sample at t, forms the exact
    posterior pair and score from ``backend``, and takes both steps from
    the identical state. A second-order local discrepancy gives a ratio
    near 4. Trials where both discrepancies vanish (below 1e-13) are
    dropped; returns None when every trial is an exact match, which is
    the expected outcome for schedules affine in t.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sched = backend.schedule
    x0 = np.atleast_2d(backend.sample_data(rng, trials))
    eps = rng.standard_normal(x0.shape)
    x_t = marginal_forward(x0, eps, t, sched)
    x0_hat = backend.posterior_x0(x_t, t)
    s = float(sched.scale(t))
    total = float(sched.noise_std(t))
    pair = StatePair(x0_hat=x0_hat, eps_hat=(x_t - s * x0_hat) / total)
    score = score_from_prediction(x_t, x0_hat, t, sched)

    norms = []
    for h in (dt, dt / 2.0):
        delta = exact_jump_step(pair, t, h, sched) - ode_euler_step(x_t, t, h, score, sched)
        norms.append(np.linalg.norm(delta, axis=-1))
    full, half = norms
    live = ~((full < EXACT_MATCH_TOL) & (half < EXACT_MATCH_TOL))
    if not np.any(live):
        return None
    return float(np.mean(full[live] / half[live]))
