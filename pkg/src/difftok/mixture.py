"""Gaussian-mixture data model with closed-form denoising quantities.

With data drawn from a mixture of isotropic Gaussians and the corruption
x_t = s*x0 + S*eps, everything a sampler needs exists in closed form:
per-component marginals are N(s*mu_j, (s^2 v_j + S^2) I), so the mixture
marginal density, its score, the posterior mean E[x0 | x_t], and each
family's native model output follow directly. All responsibilities are
computed in log space so they survive S -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularityError
from .schedules import (DiscreteVpSchedule, MarginalSchedule, ModelFamily,
                        default_schedule)

_LOG_2PI = float(np.log(2.0 * np.pi))


class GaussianMixture:
    """Isotropic Gaussian mixture: components (weight, mean, variance)."""

    def __init__(self, weights, means, variances):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.variances = np.asarray(variances, dtype=float)
        if self.weights.ndim != 1 or self.variances.ndim != 1:
            raise ConfigError("weights and variances must be 1-D")
        m = self.weights.size
        if self.means.shape[0] != m or self.variances.size != m:
            raise ConfigError("component count mismatch between fields")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError(f"weights sum to {self.weights.sum()}, expected 1")
        if np.any(self.weights < 0.0):
            raise ConfigError("weights must be non-negative")
        if np.any(self.variances <= 0.0):
            raise ConfigError("variances must be positive")
        with np.errstate(divide="ignore"):  # zero weights are legal
            self._log_weights = np.log(self.weights)

    @classmethod
    def from_components(cls, components) -> "GaussianMixture":
        """Build from an iterable of (weight, mean, variance) triples."""
        ws, mus, vs = zip(*components)
        return cls(ws, mus, vs)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def mean(self) -> np.ndarray:
        """Overall mixture mean."""
        return self.weights @ self.means

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw samples; shape (dim,) for n=None, else (n, dim)."""
        count = 1 if n is None else int(n)
        idx = rng.choice(self.n_components, size=count, p=self.weights)
        x = self.means[idx] + np.sqrt(self.variances[idx])[:, None] * rng.standard_normal(
            (count, self.dim))
        return x[0] if n is None else x

    def _component_logpdf(self, x, scale, noise_std):
        # log N(x; s*mu_j, c_j I) with c_j = s^2 v_j + S^2, shape (..., M)
        c = scale**2 * self.variances + noise_std**2
        if np.any(c <= 0.0):
            raise SingularityError("degenerate component marginal (c_j <= 0)")
        diff = x[..., None, :] - scale * self.means
        sq = np.sum(diff * diff, axis=-1)
        return -0.5 * (sq / c + self.dim * (np.log(c) + _LOG_2PI)), c, diff

    def log_marginal(self, x, scale, noise_std):
        """log p_t(x) for x of shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        logpdf, _, _ = self._component_logpdf(x, scale, noise_std)
        lw = logpdf + self._log_weights
        m = np.max(lw, axis=-1)
        out = m + np.log(np.sum(np.exp(lw - m[..., None]), axis=-1))
        if not np.all(np.isfinite(out)):
            raise SingularityError("non-finite log marginal; check inputs")
        return out

    def _responsibilities(self, x, scale, noise_std):
        logpdf, c, diff = self._component_logpdf(x, scale, noise_std)
        lw = logpdf + self._log_weights
        m = np.max(lw, axis=-1, keepdims=True)
        r = np.exp(lw - m)
        r /= np.sum(r, axis=-1, keepdims=True)
        return r, c, diff

    def posterior_mean(self, x, scale, noise_std) -> np.ndarray:
        """E[x0 | x] under x = scale*x0 + noise_std*eps.

        Responsibility-weighted combination of per-component posterior
        means mu_j + (s v_j / c_j)(x - s mu_j); reduces to x/scale when
        noise_std = 0.
        """
        x = np.asarray(x, dtype=float)
        r, c, diff = self._responsibilities(x, scale, noise_std)
        gain = scale * self.variances / c
        per_comp = self.means + gain[..., :, None] * diff
        return np.sum(r[..., :, None] * per_comp, axis=-2)

    def marginal_score(self, x, scale, noise_std) -> np.ndarray:
        """Exact gradient of log p_t at x."""
        x = np.asarray(x, dtype=float)
        r, c, diff = self._responsibilities(x, scale, noise_std)
        return np.sum(r[..., :, None] * (-diff / c[..., :, None]), axis=-2)


@dataclass
class OracleOutput:
    """One backend evaluation: family output, posterior mean, log density."""

    o_t: np.ndarray
    x0_mean: np.ndarray
    log_marginal: float | np.ndarray


class AnalyticBackend:
    """Exact stand-in for a pretrained model.

    Emits the requested family's native output from the mixture's
    closed-form posterior: noise prediction (x - s*x0_mean)/S for ddpm,
    x0_mean for consistency, velocity -x0_mean + eps_mean for flow, and
    the marginal score for ve.
    """

    def __init__(self, mixture: GaussianMixture, family: ModelFamily,
                 schedule: MarginalSchedule | None = None,
                 vp: DiscreteVpSchedule | None = None):
        self.mixture = mixture
        self.family = family
        self.schedule = schedule if schedule is not None else default_schedule(family, vp)
        if self.schedule.family is not family:
            raise ConfigError("schedule family does not match backend family")

    @property
    def dim(self) -> int:
        return self.mixture.dim

    @property
    def anchor(self) -> np.ndarray:
        return self.mixture.mean

    def sample_data(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        return self.mixture.sample(rng, n)

    def _coeffs(self, t):
        self.schedule.check_time(t)
        return float(self.schedule.scale(t)), float(self.schedule.noise_std(t))

    def posterior_x0(self, x, t) -> np.ndarray:
        s, total = self._coeffs(t)
        return self.mixture.posterior_mean(x, s, total)

    def score(self, x, t) -> np.ndarray:
        s, total = self._coeffs(t)
        return self.mixture.marginal_score(x, s, total)

    def output(self, x, t) -> np.ndarray:
        """The family's native model output o_t at (x, t)."""
        x = np.asarray(x, dtype=float)
        s, total = self._coeffs(t)
        x0_mean = self.mixture.posterior_mean(x, s, total)
        if self.family is ModelFamily.CONSISTENCY:
            return x0_mean
        if self.family is ModelFamily.VE_SCORE:
            return self.mixture.marginal_score(x, s, total)
        if total == 0.0:
            raise SingularityError("noise prediction undefined where noise_std = 0")
        eps_mean = (x - s * x0_mean) / total
        if self.family is ModelFamily.DDPM_DISCRETE:
            return eps_mean
        return -x0_mean + eps_mean  # flow velocity

    def oracle(self, x, t) -> OracleOutput:
        s, total = self._coeffs(t)
        return OracleOutput(
            o_t=self.output(x, t),
            x0_mean=self.mixture.posterior_mean(np.asarray(x, float), s, total),
            log_marginal=self.mixture.log_marginal(np.asarray(x, float), s, total),
        )
