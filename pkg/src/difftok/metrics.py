"""Reconstruction quality measures: MSE, PSNR, and windowed SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class ImageGrid:
    """A grayscale image with pixels in [0, 1], stored row-major."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(self.height, self.width)
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixels must be finite")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageGrid":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)


def _as_image(a) -> np.ndarray:
    if isinstance(a, ImageGrid):
        return a.pixels
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected an ImageGrid or 2-D array")
    return a


def mse(a, b) -> float:
    """Mean squared difference."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / mse) in dB; +inf for identical inputs."""
    a = _as_image(a)
    b = _as_image(b)
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / err)


def _gaussian_kernel(side: int, sigma: float) -> np.ndarray:
    half = (side - 1) / 2.0
    coords = np.arange(side) - half
    one_d = np.exp(-(coords**2) / (2.0 * sigma**2))
    kern = np.outer(one_d, one_d)
    return kern / kern.sum()


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean local structural similarity with a Gaussian window.

    Window is 11x11 with standard deviation 1.5, truncated to the image
    when the image is smaller (an 8x8 input uses a single 8x8 window).
    Stabilizers are C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2.
    """
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape
    if min(h, w) < 8:
        raise ValueError("image too small for SSIM (need min side >= 8)")
    side = min(SSIM_WINDOW, h, w)
    kern = _gaussian_kernel(side, SSIM_SIGMA)

    def local_mean(img):
        windows = np.lib.stride_tricks.sliding_window_view(img, (side, side))
        return np.tensordot(windows, kern, axes=([2, 3], [0, 1]))

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a**2
    var_b = local_mean(b * b) - mu_b**2
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
