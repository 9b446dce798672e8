"""Synthetic HR/LR pair construction.

Degradation is block-average downsampling followed by nearest-neighbor
pre-upsampling back to the HR grid, so both images share one spatial size.
Phantoms stand in for real slices: smooth random fields, overlapping ellipses,
and lesion-like high-contrast discs on a smooth background.

Anisotropic factors are supported as (f_h, f_w) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .diffusion import ImagePair

__all__ = [
    "PhantomSpec",
    "PHANTOM_KINDS",
    "downsample",
    "upsample_nearest",
    "gen_phantom",
    "make_pair",
]

PHANTOM_KINDS = ("smooth-field", "ellipses", "checker-lesion")

# lesion discs keep a diameter of at least 3x the usual degradation factor so
# they survive block averaging partially instead of vanishing
MIN_LESION_DIAMETER = 12


def _factors(factor) -> tuple[int, int]:
    if np.isscalar(factor):
        fh = fw = int(factor)
    else:
        fh, fw = (int(f) for f in factor)
    if fh < 1 or fw < 1:
        raise ValueError(f"factors must be positive integers, got {factor}")
    return fh, fw


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one synthetic test image with values in [0, 1]."""

    size: tuple[int, int]
    kind: str = "smooth-field"
    seed: int = 0

    def __post_init__(self):
        h, w = self.size
        if h < 16 or w < 16:
            raise ValueError(f"phantom size must be at least 16x16, got {self.size}")
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; choose from {PHANTOM_KINDS}")


def downsample(img, factor) -> np.ndarray:
    """Non-overlapping block averages; factor must divide each spatial dim."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    fh, fw = _factors(factor)
    h, w = img.shape
    if h % fh or w % fw:
        raise ValueError(f"factor ({fh}, {fw}) does not divide image shape {img.shape}")
    return img.reshape(h // fh, fh, w // fw, fw).mean(axis=(1, 3))


def upsample_nearest(img, factor) -> np.ndarray:
    """Replicate each pixel into a factor x factor block."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    fh, fw = _factors(factor)
    return np.repeat(np.repeat(img, fh, axis=0), fw, axis=1)


def make_pair(hr, factor) -> ImagePair:
    """Degrade hr and pre-upsample back: lr = upsample_nearest(downsample(hr))."""
    hr = np.asarray(hr, dtype=np.float64)
    lr = upsample_nearest(downsample(hr, factor), factor)
    return ImagePair.from_images(hr, lr)


def gen_phantom(spec: PhantomSpec) -> np.ndarray:
    """Deterministic phantom image in [0, 1] for the given spec."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    if spec.kind == "smooth-field":
        img = _smooth_field(rng, h, w)
    elif spec.kind == "ellipses":
        img = _ellipses(rng, h, w)
    else:
        img = _checker_lesion(rng, h, w)
    return np.clip(img, 0.0, 1.0)


def _smooth_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    noise = rng.standard_normal((h, w))
    field = ndimage.gaussian_filter(noise, sigma=max(min(h, w) / 12.0, 1.5), mode="reflect")
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return (field - lo) / (hi - lo)


def _ellipses(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    img = np.full((h, w), 0.1)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(4, 8)):
        cy, cx = rng.uniform(0.2 * h, 0.8 * h), rng.uniform(0.2 * w, 0.8 * w)
        ry, rx = rng.uniform(0.1 * h, 0.35 * h), rng.uniform(0.1 * w, 0.35 * w)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dy * np.cos(theta) + dx * np.sin(theta)
        v = -dy * np.sin(theta) + dx * np.cos(theta)
        mask = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
        img[mask] = rng.uniform(0.2, 1.0)
    return img


def _checker_lesion(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    img = 0.15 + 0.7 * _smooth_field(rng, h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    n_discs = int(rng.integers(1, 4))
    radius_max = max(MIN_LESION_DIAMETER // 2, min(h, w) // 5)
    for _ in range(n_discs):
        r = rng.uniform(MIN_LESION_DIAMETER / 2.0, radius_max + 0.5)
        cy = rng.uniform(r, h - r)
        cx = rng.uniform(r, w - r)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
        # push the disc hard against its local background
        background = img[mask].mean()
        img[mask] = 0.95 if background < 0.5 else 0.05
    return img
