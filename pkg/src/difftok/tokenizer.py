"""The codebook tokenization engine.

A sample is encoded as N indices into per-step noise codebooks. Each
iteration asks the model for its output at (x, t), inverts it to the
implied pair (x0_hat, eps_hat), picks the codebook entry best aligned
with (target - x0_hat), and applies the composite update

    x_{t - p*dt} = scale(t - p*dt) * x0_hat
                 + noise_std(t - dt) * eps_hat
                 + sqrt(noise_std(t - p*dt)^2 - noise_std(t - dt)^2) * eps_c,

a deterministic backward jump over dt followed by partial re-noising
with the chosen codebook entry. The mixing parameter p controls how much
time the re-noising adds back:

    p = 1   pure jump; the noise coefficient vanishes
    p = 0   time stands still; tokens accumulate at fixed t and a final
            reverse-ODE solve produces the reconstruction
    p in between advances time by p*dt per iteration

The discrete-grid family uses the equivalent grid-index update with its
own noise scale (see :func:`ddim_step`); everything else runs on the
continuous schedules. Decoding replays the exact same loops with the
recorded indices, so reconstructions are bit-identical.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .codebook import CodebookSpec, codebook_for_step, noise_block, select_noise
from .errors import ConfigError, CorruptStreamError, ScheduleInfeasibleError
from .marginal import StatePair, invert_prediction
from .schedules import DdpmSchedule, DiscreteVpSchedule, ModelFamily
from .stepplan import ContinuousSchedule, build_discrete_step_plan, build_step_plan

DEFAULT_FINAL_SAMPLE_STEPS = 32
NO_INIT_TOKEN = 0xFFFFFFFF


class InitStrategy(enum.Enum):
    """How the starting state at the tokenization time is formed."""

    RANDOM_NOISE = 0       # zero anchor plus seeded noise
    ANCHOR_PLUS_NOISE = 1  # data-mean anchor plus seeded noise
    NEAREST_NOISE = 2      # anchor plus best-aligned codebook entry (recorded)

    @classmethod
    def parse(cls, name: str) -> "InitStrategy":
        try:
            return cls[name.upper()]
        except KeyError:
            valid = ", ".join(s.name.lower() for s in cls)
            raise ConfigError(
                f"unknown init strategy {name!r}; expected one of {valid}") from None


@dataclass(frozen=True)
class TokenizerConfig:
    family: ModelFamily
    p: float
    n_tokens: int
    codebook_size: int
    seed: int
    start_time: float
    end_time: float | None = None
    intervals: int = 4
    dt_min: float = 0.002
    dt_max: float = 0.02
    rho: float = 7.0
    sigma_max: float = 80.0
    init_strategy: InitStrategy = InitStrategy.RANDOM_NOISE
    final_sample_steps: int = DEFAULT_FINAL_SAMPLE_STEPS


@dataclass(frozen=True)
class TokenStream:
    """Header echo plus the N recorded codebook indices."""

    family: ModelFamily
    p: float
    n_tokens: int
    codebook_size: int
    seed: int
    intervals: int
    dt_min: float
    dt_max: float
    rho: float
    sigma_max: float
    start_time: float
    end_time: float | None
    init_strategy: InitStrategy
    init_token: int | None
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) != self.n_tokens:
            raise ConfigError("index count does not match n_tokens")
        if any(not 0 <= i < self.codebook_size for i in self.indices):
            raise ConfigError("token index outside codebook range")

    def to_config(self, final_sample_steps: int = DEFAULT_FINAL_SAMPLE_STEPS
                  ) -> TokenizerConfig:
        return TokenizerConfig(
            family=self.family, p=self.p, n_tokens=self.n_tokens,
            codebook_size=self.codebook_size, seed=self.seed,
            start_time=self.start_time, end_time=self.end_time,
            intervals=self.intervals, dt_min=self.dt_min, dt_max=self.dt_max,
            rho=self.rho, sigma_max=self.sigma_max,
            init_strategy=self.init_strategy,
            final_sample_steps=final_sample_steps,
        )


@dataclass
class ReconstructionResult:
    x_r: np.ndarray
    trace: tuple[tuple[float, float], ...] | None = None


def validate_config(cfg: TokenizerConfig, backend) -> None:
    """Raise ConfigError for inconsistent parameters."""
    sched = backend.schedule
    if cfg.family is not backend.family:
        raise ConfigError(
            f"config family {cfg.family.value} does not match backend "
            f"{backend.family.value}")
    if not 0.0 <= cfg.p <= 1.0:
        raise ConfigError(f"p={cfg.p} outside [0, 1]")
    if cfg.n_tokens < 1:
        raise ConfigError("n_tokens must be >= 1")
    if cfg.n_tokens < cfg.intervals:
        raise ConfigError("n_tokens must be >= intervals")
    if cfg.codebook_size < 2:
        raise ConfigError("codebook_size must be >= 2")
    sched.check_time(cfg.start_time)
    if cfg.p == 0.0:
        if cfg.end_time is not None:
            raise ConfigError("end_time is meaningful only when p != 0")
        if cfg.final_sample_steps < 1:
            raise ConfigError("final_sample_steps must be >= 1 when p = 0")
        if cfg.start_time - cfg.dt_max < sched.t_min - 1e-9:
            raise ScheduleInfeasibleError(
                "largest step would jump past the start of the time domain")
    else:
        if cfg.end_time is None:
            raise ConfigError("end_time is required when p != 0")
        if not cfg.end_time < cfg.start_time:
            raise ConfigError("end_time must be below start_time")
        sched.check_time(cfg.end_time)
    if cfg.family is ModelFamily.DDPM_DISCRETE:
        _require_integer(cfg.start_time, "start_time")
        if cfg.end_time is not None:
            _require_integer(cfg.end_time, "end_time")
        if cfg.p == 0.0:
            _require_integer(cfg.dt_min, "dt_min")
            if round(cfg.dt_min) < 1:
                raise ConfigError("dt_min must be >= 1 on a discrete grid")
            if abs(cfg.dt_max - (cfg.dt_min + cfg.intervals)) > 1e-9:
                raise ConfigError(
                    "discrete schedules need dt_max = dt_min + intervals")


def _require_integer(value: float, name: str) -> None:
    if abs(value - round(value)) > 1e-9:
        raise ConfigError(f"{name}={value} must be an integer on a discrete grid")


def _composite_from_pair(pair: StatePair, t: float, dt: float, p: float,
                         eps_c: np.ndarray, sched) -> tuple[np.ndarray, float]:
    t_land = t - p * dt
    t_back = t - dt
    if t_back < sched.t_min - 1e-9:
        raise ScheduleInfeasibleError(
            f"backward jump from t={t} by dt={dt} leaves the time domain")
    land_var = float(sched.noise_std(t_land)) ** 2
    back_std = float(sched.noise_std(t_back))
    radicand = land_var - back_std**2
    if radicand < -1e-12:
        raise ScheduleInfeasibleError(
            f"re-noising coefficient negative at t={t}, dt={dt}, p={p}")
    x_next = (float(sched.scale(t_land)) * pair.x0_hat
              + back_std * pair.eps_hat
              + math.sqrt(max(radicand, 0.0)) * eps_c)
    return x_next, t_land


def composite_step(x_t: np.ndarray, t: float, dt: float, p: float,
                   eps_c: np.ndarray, backend) -> tuple[np.ndarray, float]:
    """One jump-then-renoise update; returns (x_next, t - p*dt).

    Queries the backend at (x_t, t), inverts its output, jumps back dt,
    and re-noises to t - p*dt with ``eps_c``. At p = 1 the noise
    coefficient is exactly zero and the update is the plain jump.
    """
    sched = backend.schedule
    pair = invert_prediction(backend.output(x_t, t), x_t, t, sched)
    return _composite_from_pair(pair, t, dt, p, eps_c, sched)


def ddim_noise_scale(vp: DiscreteVpSchedule, tau_prev: int, tau_cur: int,
                     p: float) -> float:
    """The stochastic coefficient of the grid update; exactly 0 at p = 0."""
    if not 0 <= tau_prev < tau_cur <= vp.total_steps:
        raise ConfigError(f"need 0 <= tau_prev < tau_cur <= {vp.total_steps}")
    if p == 0.0:
        return 0.0
    a_prev = float(vp.scale_at(tau_prev))
    a_cur = float(vp.scale_at(tau_cur))
    b_prev = float(vp.noise_std_at(tau_prev))
    b_cur = float(vp.noise_std_at(tau_cur))
    return p * (b_prev / (2.0 * b_cur)) * math.sqrt(1.0 - (a_cur / a_prev) ** 2)


def ddim_step(vp: DiscreteVpSchedule, tau_prev: int, tau_cur: int, p: float,
              eps_model: np.ndarray, x_t: np.ndarray,
              noise: np.ndarray | None) -> np.ndarray:
    """Grid-index update tau_cur -> tau_prev with a noise-prediction model.

    Equivalent arrangement of the deterministic grid sampler with an
    extra stochastic term:

        x_prev = a_prev * x0_hat + sqrt(b_prev^2 - sbar^2) * eps_model
               + sbar * noise,         x0_hat = (x - b_cur*eps_model)/a_cur

    where sbar is :func:`ddim_noise_scale`. ``noise`` may be a codebook
    entry (tokenizing), a fresh Gaussian (marginal checks), or None when
    sbar = 0.
    """
    sbar = ddim_noise_scale(vp, tau_prev, tau_cur, p)
    a_prev = float(vp.scale_at(tau_prev))
    a_cur = float(vp.scale_at(tau_cur))
    b_prev = float(vp.noise_std_at(tau_prev))
    b_cur = float(vp.noise_std_at(tau_cur))
    radicand = b_prev**2 - sbar**2
    if radicand < -1e-12:
        raise ScheduleInfeasibleError(
            f"noise scale exceeds the landing noise level at tau={tau_cur}")
    x0_hat = (x_t - b_cur * eps_model) / a_cur
    x_prev = a_prev * x0_hat + math.sqrt(max(radicand, 0.0)) * eps_model
    if sbar != 0.0:
        if noise is None:
            raise ConfigError("stochastic grid step needs a noise vector")
        x_prev = x_prev + sbar * noise
    return x_prev


def init_state(cfg: TokenizerConfig, x0_target: np.ndarray | None, backend,
               forced_token: int | None = None
               ) -> tuple[np.ndarray, int | None]:
    """Build the starting state at cfg.start_time.

    Returns (x_start, init_token); init_token is only set by the
    nearest-noise strategy. ``forced_token`` replays a recorded choice
    (decoding), in which case no target is needed.
    """
    sched = backend.schedule
    t0 = cfg.start_time
    s0 = float(sched.scale(t0))
    total0 = float(sched.noise_std(t0))
    dim = backend.dim
    anchor = np.asarray(backend.anchor, dtype=float)
    if cfg.init_strategy is InitStrategy.NEAREST_NOISE:
        spec = CodebookSpec(seed=cfg.seed, size=cfg.codebook_size, dim=dim)
        book = codebook_for_step(spec, -1)
        if forced_token is not None:
            if not 0 <= forced_token < cfg.codebook_size:
                raise CorruptStreamError(f"init token {forced_token} out of range")
            token = forced_token
        else:
            if x0_target is None:
                raise ConfigError("nearest-noise init needs a target")
            token = select_noise(book, np.asarray(x0_target, float) - anchor).index
        return s0 * anchor + total0 * book[token], token
    eps = noise_block(cfg.seed, -1, dim)
    if cfg.init_strategy is InitStrategy.RANDOM_NOISE:
        return total0 * eps, None
    return s0 * anchor + total0 * eps, None


def final_sample(x: np.ndarray, t: float, backend,
                 steps: int = DEFAULT_FINAL_SAMPLE_STEPS) -> np.ndarray:
    """Deterministic reverse solve from (x, t) to the data end of the axis.

    Continuous families take ``steps`` jump updates on a geometric time
    grid; the discrete family walks a uniform integer grid with the
    noise-free grid update. Already at the domain floor, the model's
    clean-data prediction is returned.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    sched = backend.schedule
    sched.check_time(t)
    if t <= sched.t_min + 1e-12:
        return invert_prediction(backend.output(x, t), x, t, sched).x0_hat
    if backend.family is ModelFamily.DDPM_DISCRETE:
        vp = sched.vp
        start = int(round(t))
        taus = np.unique(np.rint(np.linspace(start, 0, steps + 1)).astype(int))[::-1]
        for k in range(len(taus) - 1):
            tau_cur, tau_prev = int(taus[k]), int(taus[k + 1])
            eps_model = backend.output(x, float(tau_cur))
            x = ddim_step(vp, tau_prev, tau_cur, 0.0, eps_model, x, None)
        return x
    floor = sched.t_min if sched.t_min > 0.0 else max(t * 1e-3, 1e-9)
    times = np.geomspace(t, floor, steps + 1)
    for k in range(len(times) - 1):
        t_cur = float(times[k])
        pair = invert_prediction(backend.output(x, t_cur), x, t_cur, sched)
        target = float(times[k + 1])
        x = sched.scale(target) * pair.x0_hat + sched.noise_std(target) * pair.eps_hat
    if floor > sched.t_min + 1e-15:
        pair = invert_prediction(backend.output(x, floor), x, floor, sched)
        x = (sched.scale(sched.t_min) * pair.x0_hat
             + sched.noise_std(sched.t_min) * pair.eps_hat)
    return np.asarray(x, dtype=float)


def _moving_advances(cfg: TokenizerConfig) -> np.ndarray:
    """Per-iteration net time advance for p != 0; sums to start - end."""
    plan = build_step_plan(ContinuousSchedule(
        intervals=cfg.intervals, dt_min=cfg.dt_min, dt_max=cfg.dt_max,
        rho=cfg.rho, sigma_max=cfg.sigma_max, total=cfg.n_tokens))
    w = np.array(plan.expanded(), dtype=float)
    return w * ((cfg.start_time - cfg.end_time) / w.sum())


def _integer_grid(cfg: TokenizerConfig) -> np.ndarray:
    """Strictly decreasing integer grid from start to end, n_tokens steps."""
    w = _moving_advances(cfg)
    taus = np.concatenate([[cfg.start_time],
                           cfg.start_time - np.cumsum(w)])
    taus = np.rint(taus).astype(int)
    if np.any(np.diff(taus) >= 0):
        raise ScheduleInfeasibleError(
            "step plan does not yield a strictly decreasing integer grid")
    if taus[-1] != int(round(cfg.end_time)) or taus[-1] < 0:
        raise ScheduleInfeasibleError("integer grid misses the end time")
    return taus


def _fixed_plan(cfg: TokenizerConfig):
    if cfg.family is ModelFamily.DDPM_DISCRETE:
        return build_discrete_step_plan(
            int(round(cfg.dt_min)), cfg.intervals, cfg.rho, cfg.sigma_max,
            cfg.n_tokens)
    return build_step_plan(ContinuousSchedule(
        intervals=cfg.intervals, dt_min=cfg.dt_min, dt_max=cfg.dt_max,
        rho=cfg.rho, sigma_max=cfg.sigma_max, total=cfg.n_tokens))


def _run_engine(cfg: TokenizerConfig, backend, choose, forced_init: int | None,
                x0_target: np.ndarray | None):
    """Shared iteration core for encoding and replay.

    ``choose(step, codebook, x0_hat)`` returns (index, objective); the
    encoder selects by alignment, the decoder returns recorded indices.
    """
    sched = backend.schedule
    spec = CodebookSpec(seed=cfg.seed, size=cfg.codebook_size, dim=backend.dim)
    x, init_token = init_state(cfg, x0_target, backend, forced_token=forced_init)
    indices: list[int] = []
    trace: list[tuple[float, float]] = []

    if cfg.p == 0.0:
        t = cfg.start_time
        plan = _fixed_plan(cfg)
        step = 0
        for dt, count in plan.entries:
            for _ in range(count):
                pair = invert_prediction(backend.output(x, t), x, t, sched)
                book = codebook_for_step(spec, step)
                idx, objective = choose(step, book, pair.x0_hat)
                x, _ = _composite_from_pair(pair, t, dt, 0.0, book[idx], sched)
                indices.append(idx)
                trace.append((t, objective))
                step += 1
        x_r = final_sample(x, t, backend, cfg.final_sample_steps)
        return indices, trace, x_r, init_token, t

    if cfg.family is ModelFamily.DDPM_DISCRETE:
        taus = _integer_grid(cfg)
        vp = sched.vp
        for step in range(cfg.n_tokens):
            tau_cur, tau_prev = int(taus[step]), int(taus[step + 1])
            eps_model = backend.output(x, float(tau_cur))
            b_cur = float(vp.noise_std_at(tau_cur))
            a_cur = float(vp.scale_at(tau_cur))
            x0_hat = (x - b_cur * eps_model) / a_cur
            book = codebook_for_step(spec, step)
            idx, objective = choose(step, book, x0_hat)
            x = ddim_step(vp, tau_prev, tau_cur, cfg.p, eps_model, x, book[idx])
            indices.append(idx)
            trace.append((float(tau_cur), objective))
        return indices, trace, x, init_token, float(taus[-1])

    advances = _moving_advances(cfg)
    t = cfg.start_time
    for step, adv in enumerate(advances):
        dt = adv / cfg.p
        if t - dt < sched.t_min - 1e-9:
            raise ScheduleInfeasibleError(
                f"iteration {step}: jump from t={t} by {dt} leaves the domain")
        pair = invert_prediction(backend.output(x, t), x, t, sched)
        book = codebook_for_step(spec, step)
        idx, objective = choose(step, book, pair.x0_hat)
        t_before = t
        x, t = _composite_from_pair(pair, t, dt, cfg.p, book[idx], sched)
        indices.append(idx)
        trace.append((t_before, objective))
    return indices, trace, x, init_token, t


def tokenize(cfg: TokenizerConfig, x0_target: np.ndarray, backend
             ) -> tuple[TokenStream, ReconstructionResult]:
    """Encode one sample; returns the token stream and its reconstruction."""
    validate_config(cfg, backend)
    x0_target = np.asarray(x0_target, dtype=float)
    if x0_target.shape != (backend.dim,):
        raise ConfigError(
            f"target shape {x0_target.shape} does not match backend dim {backend.dim}")

    def choose(step, book, x0_hat):
        sel = select_noise(book, x0_target - x0_hat)
        return sel.index, sel.objective

    indices, trace, x_r, init_token, _ = _run_engine(
        cfg, backend, choose, forced_init=None, x0_target=x0_target)
    stream = TokenStream(
        family=cfg.family, p=cfg.p, n_tokens=cfg.n_tokens,
        codebook_size=cfg.codebook_size, seed=cfg.seed,
        intervals=cfg.intervals, dt_min=cfg.dt_min, dt_max=cfg.dt_max,
        rho=cfg.rho, sigma_max=cfg.sigma_max, start_time=cfg.start_time,
        end_time=cfg.end_time, init_strategy=cfg.init_strategy,
        init_token=init_token, indices=tuple(indices),
    )
    return stream, ReconstructionResult(x_r=x_r, trace=tuple(trace))


def detokenize(stream: TokenStream, backend,
               final_sample_steps: int = DEFAULT_FINAL_SAMPLE_STEPS
               ) -> ReconstructionResult:
    """Replay a token stream; bit-identical to the encoder's x_r.

    ``final_sample_steps`` is not part of the stream header and must
    match the encoding configuration (both default to 32).
    """
    cfg = stream.to_config(final_sample_steps)
    validate_config(cfg, backend)
    if stream.init_strategy is InitStrategy.NEAREST_NOISE and stream.init_token is None:
        raise CorruptStreamError("nearest-noise stream lacks its init token")

    def choose(step, book, x0_hat):
        idx = stream.indices[step]
        if not 0 <= idx < cfg.codebook_size:
            raise CorruptStreamError(f"token {idx} out of range at step {step}")
        return idx, math.nan

    _, _, x_r, _, _ = _run_engine(
        cfg, backend, choose, forced_init=stream.init_token, x0_target=None)
    return ReconstructionResult(x_r=x_r, trace=None)
