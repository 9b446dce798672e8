"""Few-step reverse sampling.

Sampling starts from the degraded image plus heavy noise,
``x_T = x_lr + gamma*sqrt(beta_T)*eps``, and walks K reverse steps through a
sub-schedule, each step replacing the unknown clean image in the posterior
mean with the denoiser estimate.  The final step has beta_prev = 0, so its
posterior variance is zero and the output is exactly the last estimate.

The chain is sequential; parallelism belongs at the slice level, with one
seeded generator per slice (see :func:`spawn_rngs`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .diffusion import reverse_step
from .schedule import Schedule, SubSchedule

__all__ = [
    "DenoiserInterface",
    "SamplerConfig",
    "init_sample",
    "run_sampler",
    "oracle_denoiser",
    "spawn_rngs",
]


class DenoiserInterface(Protocol):
    """Callable estimating the clean image from (x_t, x_lr, t)."""

    def __call__(self, x_t: np.ndarray, x_lr: np.ndarray, t: int) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerConfig:
    sub: SubSchedule
    gamma: float
    seed: int = 0
    # draw eps = 0 on the last step; the posterior variance there is zero
    # anyway, so this only controls whether the rng stream advances
    deterministic_last_step: bool = True


def _init_from_beta(x_lr: np.ndarray, beta_T: float, gamma: float, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(x_lr.shape)
    return x_lr + gamma * np.sqrt(beta_T) * eps


def init_sample(x_lr, schedule: Schedule, rng: np.random.Generator) -> np.ndarray:
    """Draw x_T ~ N(x_lr, gamma^2 beta_T I)."""
    x_lr = np.asarray(x_lr, dtype=np.float64)
    return _init_from_beta(x_lr, schedule.beta(schedule.T), schedule.gamma, rng)


def run_sampler(x_lr, denoiser: DenoiserInterface, config: SamplerConfig) -> np.ndarray:
    """Run K reverse steps from the noisy init down to the clean estimate."""
    x_lr = np.asarray(x_lr, dtype=np.float64)
    sub = config.sub
    rng = np.random.default_rng(config.seed)

    x = _init_from_beta(x_lr, float(sub.betas_at_taus[-1]), config.gamma, rng)
    for k in range(sub.K, 0, -1):
        tau = sub.taus[k - 1]
        beta_t = float(sub.betas_at_taus[k])
        beta_prev = float(sub.betas_at_taus[k - 1])

        x0_hat = np.asarray(denoiser(x, x_lr, tau), dtype=np.float64)
        if x0_hat.shape != x.shape:
            raise ValueError(
                f"denoiser output shape {x0_hat.shape} does not match state shape {x.shape} at k={k}"
            )
        if not np.all(np.isfinite(x0_hat)):
            raise FloatingPointError(f"non-finite denoiser output at k={k} (tau={tau})")
        if k == 1 and config.deterministic_last_step:
            noise = np.zeros_like(x)
        else:
            noise = rng.standard_normal(x.shape)
        x = reverse_step(x, x0_hat, beta_t, beta_prev, config.gamma, noise)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample state after reverse step k={k} (tau={tau})")
    return x


def oracle_denoiser(hr) -> Callable[[np.ndarray, np.ndarray, int], np.ndarray]:
    """Test denoiser that ignores its inputs and returns the true clean image."""
    hr = np.asarray(hr, dtype=np.float64)

    def denoise(x_t: np.ndarray, x_lr: np.ndarray, t: int) -> np.ndarray:
        return hr

    return denoise


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-slice generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
