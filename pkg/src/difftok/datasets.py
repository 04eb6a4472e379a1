"""Built-in toy data distributions and dataset file helpers."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .mixture import GaussianMixture

PROTO_SIDE = 8
PROTO_VAR = 0.01


def prototype_images() -> np.ndarray:
    """Four 8x8 grayscale prototypes: one brightness ramp per corner."""
    side = PROTO_SIDE
    r, c = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    corners = [(0, 0), (0, side - 1), (side - 1, 0), (side - 1, side - 1)]
    protos = []
    for r0, c0 in corners:
        dist = np.abs(r - r0) + np.abs(c - c0)
        protos.append(1.0 - dist / (2.0 * (side - 1)))
    return np.stack(protos)


def prototype_image_mixture() -> GaussianMixture:
    """Equal-weight mixture over the flattened 8x8 prototypes, var 0.01."""
    protos = prototype_images().reshape(4, -1)
    return GaussianMixture(
        weights=np.full(4, 0.25),
        means=protos,
        variances=np.full(4, PROTO_VAR),
    )


def two_component_mixture(dim: int = 2, offset: float = 1.0,
                          var: float = 0.25) -> GaussianMixture:
    """Two equal-weight components at +/- offset along alternating axes."""
    mean = offset * np.resize([1.0, -1.0], dim)
    return GaussianMixture(
        weights=[0.5, 0.5],
        means=[mean, -mean],
        variances=[var, var],
    )


def mixture_from_dict(spec: dict) -> GaussianMixture:
    """Build a mixture from the JSON config form.

    Either {"preset": "prototype-images"} or
    {"components": [{"weight": w, "mean": [...], "var": v}, ...]}.
    """
    if "preset" in spec:
        preset = spec["preset"]
        if preset == "prototype-images":
            return prototype_image_mixture()
        raise ConfigError(f"unknown mixture preset {preset!r}")
    try:
        comps = spec["components"]
        return GaussianMixture(
            weights=[c["weight"] for c in comps],
            means=[c["mean"] for c in comps],
            variances=[c["var"] for c in comps],
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed mixture spec: {exc}") from exc


def mixture_to_dict(mix: GaussianMixture) -> dict:
    return {
        "components": [
            {"weight": float(w), "mean": [float(v) for v in mu], "var": float(var)}
            for w, mu, var in zip(mix.weights, mix.means, mix.variances)
        ]
    }


def save_dataset(path, samples: np.ndarray, width: int | None = None,
                 height: int | None = None) -> None:
    """Write samples (n, dim) to an .npz file, with image shape if any."""
    extra = {}
    if width is not None and height is not None:
        extra = {"width": np.array(width), "height": np.array(height)}
    np.savez(path, samples=np.asarray(samples, dtype=float), **extra)


def load_dataset(path):
    """Read an .npz dataset; returns (samples, width_or_None, height_or_None)."""
    with np.load(path) as data:
        samples = data["samples"]
        width = int(data["width"]) if "width" in data else None
        height = int(data["height"]) if "height" in data else None
    return samples, width, height
