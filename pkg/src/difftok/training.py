"""Minimal trainable denoiser: a two-hidden-layer tanh perceptron.

The network maps (x, t) -> output of the data dimension, with the time
fed as one extra scalar feature scaled to [0, 1]. Training is plain SGD
with explicit gradients, so runs are reproducible to the bit given the
same configuration. Two objectives are supported:

    noise prediction    target eps     on the discrete VP grid
    velocity matching   target eps - x0 on the linear flow path

Trained models plug into the tokenizer through :class:`ToyBackend`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .mixture import GaussianMixture
from .schedules import (FLOW_T_MAX, DiscreteVpSchedule, MarginalSchedule,
                        ModelFamily, default_schedule)

HIDDEN_WIDTH = 64
OUTPUT_INIT_SCALE = 8.0   # start well away from the targets; see ToyDenoiser
_LR_FLOOR_FRACTION = 0.1
_BLOB_MAGIC = b"dtk1"


@dataclass(frozen=True)
class TrainConfig:
    """Plain-SGD settings.

    ``learning_rate`` is the initial rate; it decays linearly to 10% of
    its value over the run, which keeps late-stage gradient noise from
    masking the remaining descent.
    """

    steps: int
    batch: int
    learning_rate: float
    seed: int

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be >= 1")
        if self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be >= 0")


class ToyDenoiser:
    """Two hidden tanh layers of width 64; input is x plus a time feature.

    The output layer is initialized with a deliberately large scale so a
    fresh model starts far from the regression targets; both objectives
    have sizable irreducible floors, and a near-zero initial output would
    start training almost on top of them.
    """

    def __init__(self, family: ModelFamily, dim: int, time_scale: float,
                 rng: np.random.Generator | None = None):
        self.family = family
        self.dim = int(dim)
        self.time_scale = float(time_scale)
        h = HIDDEN_WIDTH
        if rng is None:
            self.w1 = np.zeros((h, dim + 1))
            self.w2 = np.zeros((h, h))
            self.w3 = np.zeros((dim, h))
        else:
            self.w1 = rng.standard_normal((h, dim + 1)) / np.sqrt(dim + 1)
            self.w2 = rng.standard_normal((h, h)) / np.sqrt(h)
            self.w3 = OUTPUT_INIT_SCALE * rng.standard_normal((dim, h)) / np.sqrt(h)
        self.b1 = np.zeros(h)
        self.b2 = np.zeros(h)
        self.b3 = np.zeros(self.dim)
        self.loss_history = np.zeros(0)

    def forward(self, x: np.ndarray, t) -> np.ndarray:
        """Deterministic forward pass; x has shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ConfigError(f"input dim {x.shape[-1]} != model dim {self.dim}")
        t_feat = np.broadcast_to(np.asarray(t, float) / self.time_scale,
                                 x.shape[:-1])[..., None]
        a0 = np.concatenate([x, t_feat], axis=-1)
        h1 = np.tanh(a0 @ self.w1.T + self.b1)
        h2 = np.tanh(h1 @ self.w2.T + self.b2)
        return h2 @ self.w3.T + self.b3

    def _sgd_step(self, x: np.ndarray, t: np.ndarray, target: np.ndarray,
                  lr: float) -> float:
        t_feat = (t / self.time_scale)[:, None]
        a0 = np.concatenate([x, t_feat], axis=-1)
        z1 = a0 @ self.w1.T + self.b1
        h1 = np.tanh(z1)
        z2 = h1 @ self.w2.T + self.b2
        h2 = np.tanh(z2)
        out = h2 @ self.w3.T + self.b3
        resid = out - target
        loss = float(np.mean(resid**2))
        d_out = 2.0 * resid / resid.size
        d_h2 = d_out @ self.w3
        d_z2 = d_h2 * (1.0 - h2**2)
        d_h1 = d_z2 @ self.w2
        d_z1 = d_h1 * (1.0 - h1**2)
        self.w3 -= lr * (d_out.T @ h2)
        self.b3 -= lr * d_out.sum(axis=0)
        self.w2 -= lr * (d_z2.T @ h1)
        self.b2 -= lr * d_z2.sum(axis=0)
        self.w1 -= lr * (d_z1.T @ a0)
        self.b1 -= lr * d_z1.sum(axis=0)
        return loss

    def to_bytes(self) -> bytes:
        """Flat blob: magic, family byte, (dim, hidden, out) u32 LE,
        time_scale f64, then all parameters row-major f64 LE."""
        head = _BLOB_MAGIC + struct.pack(
            "<BIII d", self.family.wire_code, self.dim + 1, HIDDEN_WIDTH,
            self.dim, self.time_scale)
        parts = [p.astype("<f8").tobytes() for p in
                 (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)]
        return head + b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ToyDenoiser":
        if blob[:4] != _BLOB_MAGIC:
            raise ConfigError("not a model blob")
        family_code, d_in, h, d_out, time_scale = struct.unpack_from("<BIII d", blob, 4)
        if h != HIDDEN_WIDTH or d_in != d_out + 1:
            raise ConfigError("unexpected model dimensions in blob")
        model = cls(ModelFamily.from_wire(family_code), d_out, time_scale)
        offset = 4 + struct.calcsize("<BIII d")
        shapes = [(h, d_in), (h,), (h, h), (h,), (d_out, h), (d_out,)]
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            arrays.append(np.frombuffer(blob, dtype="<f8", count=n,
                                        offset=offset).reshape(shape).copy())
            offset += 8 * n
        if offset != len(blob):
            raise ConfigError("model blob has trailing bytes")
        model.w1, model.b1, model.w2, model.b2, model.w3, model.b3 = arrays
        return model


def toy_forward(model: ToyDenoiser, x: np.ndarray, t) -> np.ndarray:
    """Evaluate the network; output is usable as the family's o_t."""
    return model.forward(x, t)


def _train(model: ToyDenoiser, make_batch, cfg: TrainConfig) -> ToyDenoiser:
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        decay = 1.0 - (1.0 - _LR_FLOOR_FRACTION) * step / cfg.steps
        x, t, target = make_batch()
        losses[step] = model._sgd_step(x, t, target, cfg.learning_rate * decay)
        if not np.isfinite(losses[step]):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
    model.loss_history = losses
    return model


def train_epsilon(dataset: GaussianMixture, cfg: TrainConfig,
                  vp: DiscreteVpSchedule | None = None) -> ToyDenoiser:
    """SGD on the noise-prediction objective over the discrete VP grid."""
    vp = vp if vp is not None else DiscreteVpSchedule.linear()
    rng = np.random.default_rng(cfg.seed)
    model = ToyDenoiser(ModelFamily.DDPM_DISCRETE, dataset.dim,
                        time_scale=float(vp.total_steps), rng=rng)

    def make_batch():
        x0 = dataset.sample(rng, cfg.batch)
        tau = rng.integers(1, vp.total_steps + 1, size=cfg.batch)
        eps = rng.standard_normal(x0.shape)
        x_t = (vp.scale_at(tau)[:, None] * x0
               + vp.noise_std_at(tau)[:, None] * eps)
        return x_t, tau.astype(float), eps

    return _train(model, make_batch, cfg)


def train_flow(dataset: GaussianMixture, cfg: TrainConfig) -> ToyDenoiser:
    """SGD on the velocity objective along the linear path z = (1-t)x0 + t*eps."""
    rng = np.random.default_rng(cfg.seed)
    model = ToyDenoiser(ModelFamily.FLOW, dataset.dim, time_scale=1.0, rng=rng)

    def make_batch():
        x0 = dataset.sample(rng, cfg.batch)
        t = rng.uniform(0.0, FLOW_T_MAX, size=cfg.batch)
        eps = rng.standard_normal(x0.shape)
        z_t = (1.0 - t)[:, None] * x0 + t[:, None] * eps
        return z_t, t, eps - x0

    return _train(model, make_batch, cfg)


class ToyBackend:
    """Adapter exposing a trained ToyDenoiser to the tokenizer."""

    def __init__(self, model: ToyDenoiser, schedule: MarginalSchedule | None = None,
                 vp: DiscreteVpSchedule | None = None,
                 anchor: np.ndarray | None = None):
        self.model = model
        self.family = model.family
        self.schedule = schedule if schedule is not None else default_schedule(
            model.family, vp)
        self._anchor = (np.zeros(model.dim) if anchor is None
                        else np.asarray(anchor, dtype=float))

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def anchor(self) -> np.ndarray:
        return self._anchor

    def output(self, x, t) -> np.ndarray:
        self.schedule.check_time(t)
        return self.model.forward(x, t)
