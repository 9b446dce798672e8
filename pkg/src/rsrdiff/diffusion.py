"""Forward and reverse Gaussian kernels of the residual-shifting process.

Images are plain numpy arrays, (H, W) or (H, W, C).  The forward chain moves a
clean image toward its degraded counterpart by adding ``alpha_t * e0`` per step
(``e0 = lr - hr``) plus Gaussian noise of variance ``gamma^2 * alpha_t``.
Because independent Gaussian increments add in variance, composing steps gives
the closed-form marginal ``N(hr + beta_t * e0, gamma^2 * beta_t I)``.

Everything here is pure given an explicit noise array; callers own randomness.
All kernel arithmetic runs in float64 regardless of input storage dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule

__all__ = [
    "GaussianParams",
    "ImagePair",
    "residual",
    "forward_step",
    "forward_marginal",
    "marginal_params",
    "posterior_params",
    "reverse_step",
]


def _as_image(x, name: str = "image") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2D (H, W) or 3D (H, W, C), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class GaussianParams:
    """Isotropic Gaussian: per-pixel mean plus one scalar variance."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"variance must be nonnegative, got {self.variance}")


@dataclass(frozen=True)
class ImagePair:
    """Aligned (hr, lr) at equal spatial size, with the residual lr - hr cached."""

    hr: np.ndarray
    lr: np.ndarray
    residual: np.ndarray

    @classmethod
    def from_images(cls, hr, lr) -> "ImagePair":
        hr = _as_image(hr, "hr")
        lr = _as_image(lr, "lr")
        return cls(hr=hr, lr=lr, residual=residual(hr, lr))


def residual(hr, lr) -> np.ndarray:
    """Residual e0 = lr - hr, elementwise."""
    hr = _as_image(hr, "hr")
    lr = _as_image(lr, "lr")
    _check_same_shape(hr, lr, "residual")
    return lr - hr


def forward_step(x_prev, e0, t: int, schedule: Schedule, noise) -> np.ndarray:
    """One forward transition: x_t = x_{t-1} + alpha_t*e0 + gamma*sqrt(alpha_t)*noise."""
    x_prev = _as_image(x_prev, "x_prev")
    e0 = _as_image(e0, "e0")
    noise = np.asarray(noise, dtype=np.float64)
    _check_same_shape(x_prev, e0, "forward_step")
    _check_same_shape(x_prev, noise, "forward_step noise")
    alpha_t = schedule.alpha(t)
    return x_prev + alpha_t * e0 + schedule.gamma * np.sqrt(alpha_t) * noise


def forward_marginal(hr, e0, t: int, schedule: Schedule, noise) -> np.ndarray:
    """Closed-form jump to step t: x_t = hr + beta_t*e0 + gamma*sqrt(beta_t)*noise."""
    hr = _as_image(hr, "hr")
    e0 = _as_image(e0, "e0")
    noise = np.asarray(noise, dtype=np.float64)
    _check_same_shape(hr, e0, "forward_marginal")
    _check_same_shape(hr, noise, "forward_marginal noise")
    if t < 1:
        raise ValueError(f"step t={t} out of range [1, {schedule.T}]")
    beta_t = schedule.beta(t)
    return hr + beta_t * e0 + schedule.gamma * np.sqrt(beta_t) * noise


def marginal_params(hr, e0, t: int, schedule: Schedule) -> GaussianParams:
    """Mean and scalar variance of the step-t marginal."""
    hr = _as_image(hr, "hr")
    e0 = _as_image(e0, "e0")
    _check_same_shape(hr, e0, "marginal_params")
    if t < 1:
        raise ValueError(f"step t={t} out of range [1, {schedule.T}]")
    beta_t = schedule.beta(t)  # also validates t <= T
    return GaussianParams(mean=hr + beta_t * e0, variance=schedule.gamma**2 * beta_t)


def posterior_params(x_t, x0_hat, beta_t: float, beta_prev: float, gamma: float) -> GaussianParams:
    """Gaussian posterior of the previous state given x_t and a clean estimate.

    mean = (beta_prev/beta_t) * x_t + ((beta_t - beta_prev)/beta_t) * x0_hat
    variance = gamma^2 * (beta_t - beta_prev) * beta_prev / beta_t

    With consecutive steps beta_prev = beta_{t-1} this is the exact one-step
    posterior; the delta-beta form extends it to any sub-schedule pair, and
    beta_prev = 0 collapses onto x0_hat with zero variance (the final step).
    """
    x_t = _as_image(x_t, "x_t")
    x0_hat = _as_image(x0_hat, "x0_hat")
    _check_same_shape(x_t, x0_hat, "posterior_params")
    if not 0.0 <= beta_prev < beta_t:
        raise ValueError(f"need 0 <= beta_prev < beta_t, got beta_prev={beta_prev}, beta_t={beta_t}")
    w_prev = beta_prev / beta_t
    w_hat = (beta_t - beta_prev) / beta_t
    mean = w_prev * x_t + w_hat * x0_hat
    variance = gamma**2 * (beta_t - beta_prev) * beta_prev / beta_t
    return GaussianParams(mean=mean, variance=variance)


def reverse_step(x_t, x0_hat, beta_t: float, beta_prev: float, gamma: float, noise) -> np.ndarray:
    """Sample the posterior: mean + sqrt(variance) * noise."""
    params = posterior_params(x_t, x0_hat, beta_t, beta_prev, gamma)
    noise = np.asarray(noise, dtype=np.float64)
    _check_same_shape(params.mean, noise, "reverse_step noise")
    return params.mean + np.sqrt(params.variance) * noise
