"""Perceptual distance proxy: feature-space MSE over a fixed bank of seeded
random convolutions.

A stand-in for learned perceptual metrics that needs no pretrained weights.
Filters are zero-mean per output channel, so a constant brightness shift
cancels in the first layer and the distance is invariant to shared DC
offsets; per-location channel normalization mirrors the usual unit-norm
feature comparison.  Deterministic, symmetric, zero for identical inputs,
and differentiable through torch for use as a training loss term.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

__all__ = ["FeatureBank", "default_bank", "perceptual_proxy", "proxy_distance_torch"]

DEFAULT_BANK_SEED = 17
_CHANNELS = (8, 16, 32)
_STRIDES = (1, 2, 2)
_NORM_EPS = 1e-10


class FeatureBank:
    """Three fixed conv layers (tanh, strides 1/2/2) drawn once from a seed."""

    def __init__(self, seed: int = DEFAULT_BANK_SEED):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self._weights: list[torch.Tensor] = []
        in_ch = 1
        for out_ch in _CHANNELS:
            w = rng.standard_normal((out_ch, in_ch, 3, 3))
            w -= w.mean(axis=(1, 2, 3), keepdims=True)
            w /= np.sqrt((w**2).sum(axis=(1, 2, 3), keepdims=True))
            self._weights.append(torch.from_numpy(w))
            in_ch = out_ch

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Feature maps for a (B, 1, H, W) batch; reflect padding keeps
        constants constant so the zero-mean filters cancel DC exactly."""
        feats = []
        h = x
        for w, stride in zip(self._weights, _STRIDES):
            h = F.pad(h, (1, 1, 1, 1), mode="reflect")
            h = torch.tanh(F.conv2d(h, w.to(h.dtype), stride=stride))
            feats.append(h)
        return feats


_default_bank: FeatureBank | None = None


def default_bank() -> FeatureBank:
    global _default_bank
    if _default_bank is None:
        _default_bank = FeatureBank()
    return _default_bank


def proxy_distance_torch(a: torch.Tensor, b: torch.Tensor, bank: FeatureBank | None = None) -> torch.Tensor:
    """Differentiable proxy on (B, 1, H, W) batches; returns a scalar tensor."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    bank = bank or default_bank()
    total = None
    for fa, fb in zip(bank.features(a), bank.features(b)):
        na = fa / torch.sqrt((fa**2).sum(dim=1, keepdim=True) + _NORM_EPS)
        nb = fb / torch.sqrt((fb**2).sum(dim=1, keepdim=True) + _NORM_EPS)
        term = ((na - nb) ** 2).mean()
        total = term if total is None else total + term
    return total / len(_CHANNELS)


def perceptual_proxy(a, b, bank: FeatureBank | None = None) -> float:
    """Numpy surface: proxy distance between two 2D images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"expected 2D images, got {a.ndim}D")
    if min(a.shape) < 4:
        raise ValueError(f"image {a.shape} too small for the 3-level feature bank")
    with torch.no_grad():
        ta = torch.from_numpy(a)[None, None]
        tb = torch.from_numpy(b)[None, None]
        return float(proxy_distance_torch(ta, tb, bank))
