"""Seeded, independently regenerable noise codebooks.

Step ``i`` of a tokenization owns a codebook of ``size`` unit-variance
Gaussian vectors that any party can regenerate bit-exactly from
``(seed, i, size, dim)`` alone; no generator state survives between
steps, so codebooks for different steps can be built in any order or in
parallel.

Generator (documented so other implementations can reproduce streams):

    PHI  = 0x9E3779B97F4A7C15                      (64-bit golden ratio)
    mix(z):  z ^= z >> 30;  z *= 0xBF58476D1E3B69F9
             z ^= z >> 27;  z *= 0x94D049BB133111EB
             z ^= z >> 31                          (SplitMix64 finalizer)
    key(seed, i) = mix(mix(seed) ^ (u64(i) + PHI))  with i in two's complement
    word(c)      = mix(key + (c + 1) * PHI)         for counter c = 0, 1, ...
    u(c)         = (float(word(c) >> 11) + 1) * 2^-53   in (0, 1]

Counters map to standard normals through the Box-Muller transform: the
pair (2p, 2p+1) of stream values is

    r = sqrt(-2 ln u(2p)),  a = 2 pi u(2p+1)
    value[2p] = r cos(a),   value[2p+1] = r sin(a)

and codebook entry (k, c) is value[k * dim + c]. All arithmetic is
unsigned 64-bit with wraparound. Step index -1 is reserved for the
initialization stream of the tokenizer.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PHI = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1E3B69F9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def stream_key(seed: int, index: int) -> np.uint64:
    """The per-(seed, index) key; index may be negative (two's complement)."""
    seed_u = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    idx_u = np.array([index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return _mix(_mix(seed_u) ^ (idx_u + PHI))[0]


def noise_block(seed: int, index: int, count: int) -> np.ndarray:
    """The first ``count`` standard normals of stream (seed, index)."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    key = stream_key(seed, index)
    pairs = (count + 1) // 2
    counters = np.arange(2 * pairs, dtype=np.uint64)
    words = _mix(key + (counters + np.uint64(1)) * PHI)
    u = ((words >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = (2.0 * np.pi) * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(angle)
    out[1::2] = r * np.sin(angle)
    return out[:count]


@dataclass(frozen=True)
class CodebookSpec:
    """Identity of a codebook family: seed, entries per step, entry dimension."""

    seed: int
    size: int
    dim: int

    def __post_init__(self):
        if self.size < 2:
            raise ConfigError("codebook size must be >= 2")
        if self.dim < 1:
            raise ConfigError("codebook dim must be >= 1")


@functools.lru_cache(maxsize=256)
def _cached_codebook(seed: int, index: int, size: int, dim: int) -> np.ndarray:
    book = noise_block(seed, index, size * dim).reshape(size, dim)
    book.setflags(write=False)
    return book


def codebook_for_step(spec: CodebookSpec, index: int) -> np.ndarray:
    """Regenerate the (size, dim) codebook for one step.

    Pure function of (seed, index, size, dim); repeated calls are
    bit-identical. Index -1 is the reserved initialization stream.
    Returned arrays are cached and read-only.
    """
    if index < -1:
        raise ConfigError("codebook step index must be >= -1")
    return _cached_codebook(spec.seed, index, spec.size, spec.dim)


@dataclass
class NoiseSelection:
    """A chosen codebook entry and the criterion value that selected it."""

    index: int
    noise: np.ndarray
    objective: float


def select_noise(codebook: np.ndarray, target_diff: np.ndarray) -> NoiseSelection:
    """Entry maximizing the inner product with ``target_diff``.

    ``target_diff`` is the tokenization target minus the current
    prediction. Ties break toward the lowest index, so selections are
    deterministic.
    """
    codebook = np.asarray(codebook, dtype=float)
    target_diff = np.asarray(target_diff, dtype=float)
    if codebook.ndim != 2 or codebook.shape[1] != target_diff.shape[-1]:
        raise ValueError(
            f"codebook {codebook.shape} incompatible with diff {target_diff.shape}")
    objectives = codebook @ target_diff
    idx = int(np.argmax(objectives))
    return NoiseSelection(index=idx, noise=codebook[idx], objective=float(objectives[idx]))


def nearest_noise(codebook: np.ndarray, eps_target: np.ndarray) -> NoiseSelection:
    """Entry minimizing squared Euclidean distance to ``eps_target``.

    The quantity the inner-product rule approximates; the reported
    objective is the squared distance.
    """
    codebook = np.asarray(codebook, dtype=float)
    eps_target = np.asarray(eps_target, dtype=float)
    if codebook.ndim != 2 or codebook.shape[1] != eps_target.shape[-1]:
        raise ValueError(
            f"codebook {codebook.shape} incompatible with target {eps_target.shape}")
    d2 = np.sum((codebook - eps_target) ** 2, axis=1)
    idx = int(np.argmin(d2))
    return NoiseSelection(index=idx, noise=codebook[idx], objective=float(d2[idx]))
